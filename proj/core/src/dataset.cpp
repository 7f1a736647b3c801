#include "regtr/dataset.hpp"

#include "regtr/error.hpp"
#include "regtr/pointcloud_io.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace regtr::data {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw InvalidArgument("manifest: bad number for " + key + ": " + v);
  }
  if (pos != v.size()) throw InvalidArgument("manifest: bad number for " + key + ": " + v);
  return out;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t x = base + 0x9E3779B97F4A7C15ull * (index + 1);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = trim(line.substr(1, eq - 1));
      const std::string val = trim(line.substr(eq + 1));
      auto& o = m.pair_options;
      if (key == "shape_points") m.shape_points = static_cast<std::size_t>(parse_double(key, val));
      else if (key == "noise_sigma") o.noise_sigma = parse_double(key, val);
      else if (key == "max_rotation_deg") o.max_rotation_deg = parse_double(key, val);
      else if (key == "max_translation") o.max_translation = parse_double(key, val);
      else if (key == "overlap_radius") o.overlap_radius = parse_double(key, val);
      else if (key == "min_points") o.min_points = static_cast<std::size_t>(parse_double(key, val));
      else if (key == "shuffle") o.shuffle = val == "1" || val == "true";
      else throw InvalidArgument("manifest line " + std::to_string(lineno) + ": unknown key " + key);
      continue;
    }
    std::istringstream ls(line);
    ManifestEntry e;
    std::string kind;
    if (!(ls >> e.seed >> kind >> e.keep_fraction >> e.count)) {
      throw InvalidArgument("manifest line " + std::to_string(lineno) + ": expected `seed kind p count`");
    }
    e.kind = synth::parse_shape_kind(kind);
    ls >> e.scene;
    m.entries.push_back(e);
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  const auto& o = m.pair_options;
  out << "# regtr dataset manifest v1\n" << std::setprecision(17);
  out << "# shape_points = " << m.shape_points << '\n';
  out << "# noise_sigma = " << o.noise_sigma << '\n';
  out << "# max_rotation_deg = " << o.max_rotation_deg << '\n';
  out << "# max_translation = " << o.max_translation << '\n';
  out << "# overlap_radius = " << o.overlap_radius << '\n';
  out << "# min_points = " << o.min_points << '\n';
  out << "# shuffle = " << (o.shuffle ? 1 : 0) << '\n';
  out << "# seed kind p count [scene]\n";
  for (const auto& e : m.entries) {
    out << e.seed << ' ' << synth::to_string(e.kind) << ' ' << e.keep_fraction << ' ' << e.count;
    if (!e.scene.empty()) out << ' ' << e.scene;
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

synth::PairSample generate_pair(const ManifestEntry& entry, const Manifest& manifest) {
  synth::Rng rng(entry.seed);
  const PointCloud shape = synth::generate_shape(entry.kind, manifest.shape_points, rng);
  synth::PairOptions opts = manifest.pair_options;
  opts.resample_count = entry.count;
  return synth::make_modelnet_style_pair(shape, entry.keep_fraction, rng, opts);
}

std::vector<synth::PairSample> generate_all(const Manifest& manifest) {
  std::vector<synth::PairSample> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) out.push_back(generate_pair(e, manifest));
  return out;
}

Manifest make_manifest(std::uint64_t base_seed, std::size_t pairs, const std::vector<synth::ShapeKind>& kinds,
                       double keep_fraction, std::size_t count, std::size_t shape_points,
                       const synth::PairOptions& options) {
  if (kinds.empty()) throw InvalidArgument("make_manifest: no shape kinds");
  Manifest m;
  m.shape_points = shape_points;
  m.pair_options = options;
  for (std::size_t i = 0; i < pairs; ++i) {
    ManifestEntry e;
    e.seed = derive_seed(base_seed, i);
    e.kind = kinds[i % kinds.size()];
    e.keep_fraction = keep_fraction;
    e.count = count;
    m.entries.push_back(e);
  }
  return m;
}

std::string pair_stem(std::size_t index) {
  std::ostringstream s;
  s << "pair_" << std::setw(4) << std::setfill('0') << index;
  return s.str();
}

std::vector<synth::PairSample> write_dataset(const std::filesystem::path& dir, const Manifest& manifest) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create dataset directory: " + dir.string());
  std::vector<synth::PairSample> pairs = generate_all(manifest);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::string stem = pair_stem(i);
    io::write_ply(dir / (stem + "_src.ply"), pairs[i].source);
    io::write_ply(dir / (stem + "_tgt.ply"), pairs[i].target);
    io::write_transform(dir / (stem + "_gt.txt"), pairs[i].gt_transform);
  }
  write_manifest(dir / "manifest.txt", manifest);
  return pairs;
}

synth::PairSample load_pair_files(const std::filesystem::path& dir, std::size_t index) {
  const std::string stem = pair_stem(index);
  synth::PairSample p;
  p.source = io::read_ply(dir / (stem + "_src.ply"));
  p.target = io::read_ply(dir / (stem + "_tgt.ply"));
  p.gt_transform = io::read_transform(dir / (stem + "_gt.txt"));
  return p;
}

}  // namespace regtr::data
