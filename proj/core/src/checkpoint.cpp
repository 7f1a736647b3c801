#include "regtr/checkpoint.hpp"

#include "regtr/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace regtr {
namespace {

constexpr char kMagic[8] = {'R', 'G', 'T', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename U>
U get(std::istream& in, const std::string& what) {
  U v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("checkpoint truncated while reading " + what);
  return v;
}

std::string get_string(std::istream& in, std::size_t n, const std::string& what) {
  if (n > (1u << 24)) throw IoError("checkpoint: implausible length for " + what);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw IoError("checkpoint truncated while reading " + what);
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const ModelParams<float>& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  const std::string text = model_config_text(cfg);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  std::uint64_t count = 0;
  params.for_each([&](const std::string&, const ad::Tensor<float>&) { ++count; });
  put<std::uint64_t>(out, count);
  params.for_each([&](const std::string& name, const ad::Tensor<float>& t) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, 2);
    put<std::uint64_t>(out, t.rows());
    put<std::uint64_t>(out, t.cols());
    out.write(reinterpret_cast<const char*>(t.values().data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  });
  if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw IoError("not a regtr checkpoint: " + path.string());
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto text = get_string(in, get<std::uint64_t>(in, "config length"), "config");

  Checkpoint ck;
  ck.config = parse_model_config_text(text);
  ck.params = init_params<float>(ck.config, 0);

  std::map<std::string, ad::Tensor<float>> by_name;
  ck.params.for_each([&](const std::string& name, ad::Tensor<float>& t) { by_name.emplace(name, t); });
  const auto count = get<std::uint64_t>(in, "tensor count");
  if (count != by_name.size()) {
    throw InvalidArgument("checkpoint has " + std::to_string(count) + " tensors, config implies " +
                          std::to_string(by_name.size()));
  }
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::string name = get_string(in, get<std::uint32_t>(in, "name length"), "name");
    const auto rank = get<std::uint32_t>(in, "rank");
    if (rank != 2) throw IoError("checkpoint tensor " + name + " has rank " + std::to_string(rank));
    const auto rows = get<std::uint64_t>(in, "dims");
    const auto cols = get<std::uint64_t>(in, "dims");
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw InvalidArgument("checkpoint tensor " + name + " is not part of the model");
    if (it->second.rows() != rows || it->second.cols() != cols) {
      throw InvalidArgument("checkpoint tensor " + name + " has shape [" + std::to_string(rows) + "x" +
                            std::to_string(cols) + "], model expects " + it->second.shape_str());
    }
    auto v = it->second.mutable_values();
    if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)))) {
      throw IoError("checkpoint truncated in tensor " + name);
    }
  }
  return ck;
}

}  // namespace regtr
