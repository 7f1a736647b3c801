#include "regtr/pointcloud_io.hpp"

#include "regtr/error.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

namespace regtr::io {
namespace {

constexpr std::array<char, 8> kBinaryMagic{'R', 'G', 'T', 'R', 'P', 'C', '0', '1'};

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  return out;
}

template <typename U>
U to_little_endian(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(U)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<U>(bytes);
  }
  return v;
}

}  // namespace

PointCloud read_ply(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) throw IoError("not a PLY file: " + path.string());

  std::size_t vertex_count = 0;
  std::size_t vertex_props = 0;
  bool in_vertex = false;
  bool header_done = false;
  std::array<std::string, 3> first_props;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "ascii") throw IoError("only ASCII PLY is supported: " + path.string());
    } else if (key == "element") {
      std::string name;
      std::size_t count = 0;
      ls >> name >> count;
      in_vertex = name == "vertex";
      if (in_vertex) vertex_count = count;
    } else if (key == "property" && in_vertex) {
      std::string type;
      std::string name;
      ls >> type >> name;
      if (vertex_props < 3) first_props[vertex_props] = name;
      ++vertex_props;
    } else if (key == "end_header") {
      header_done = true;
      break;
    }
  }
  if (!header_done) throw IoError("PLY header not terminated: " + path.string());
  if (vertex_props < 3 || first_props[0] != "x" || first_props[1] != "y" || first_props[2] != "z") {
    throw IoError("PLY vertex element must start with x y z: " + path.string());
  }

  std::vector<Vec3> pts;
  pts.reserve(vertex_count);
  for (std::size_t i = 0; i < vertex_count; ++i) {
    if (!std::getline(in, line)) throw IoError("PLY truncated: " + path.string());
    std::istringstream ls(line);
    Vec3 p;
    if (!(ls >> p.x() >> p.y() >> p.z())) throw IoError("PLY malformed vertex line " + std::to_string(i));
    pts.push_back(p);
  }
  return PointCloud(std::move(pts));
}

void write_ply(const std::filesystem::path& path, const PointCloud& pc) {
  auto out = open_out(path);
  out << "ply\nformat ascii 1.0\nelement vertex " << pc.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  out << std::setprecision(9);
  for (const auto& p : pc) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

PointCloud read_binary(const std::filesystem::path& path) {
  auto in = open_in(path, std::ios::in | std::ios::binary);
  std::array<char, 8> magic{};
  std::uint64_t count = 0;
  in.read(magic.data(), magic.size());
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (!in || magic != kBinaryMagic) throw IoError("bad binary cloud header: " + path.string());
  count = to_little_endian(count);
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    std::array<float, 3> xyz{};
    in.read(reinterpret_cast<char*>(xyz.data()), sizeof(xyz));
    if (!in) throw IoError("binary cloud truncated: " + path.string());
    Vec3 p;
    for (int a = 0; a < 3; ++a) p[a] = static_cast<double>(to_little_endian(xyz[a]));
    pts.push_back(p);
  }
  return PointCloud(std::move(pts));
}

void write_binary(const std::filesystem::path& path, const PointCloud& pc) {
  auto out = open_out(path, std::ios::out | std::ios::binary);
  const std::uint64_t count = to_little_endian(static_cast<std::uint64_t>(pc.size()));
  out.write(kBinaryMagic.data(), kBinaryMagic.size());
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& p : pc) {
    std::array<float, 3> xyz{};
    for (int a = 0; a < 3; ++a) xyz[a] = to_little_endian(static_cast<float>(p[a]));
    out.write(reinterpret_cast<const char*>(xyz.data()), sizeof(xyz));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

PointCloud read_cloud(const std::filesystem::path& path) {
  if (path.extension() == ".bin") return read_binary(path);
  return read_ply(path);
}

void write_cloud(const std::filesystem::path& path, const PointCloud& pc) {
  if (path.extension() == ".bin") {
    write_binary(path, pc);
  } else {
    write_ply(path, pc);
  }
}

RigidTransform read_transform(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::array<double, 12> v{};
  for (double& x : v) {
    if (!(in >> x)) throw IoError("transform file needs 12 values: " + path.string());
  }
  Mat3 r;
  r << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
  return RigidTransform::from_approximate(r, Vec3(v[9], v[10], v[11]));
}

void write_transform(const std::filesystem::path& path, const RigidTransform& t) {
  auto out = open_out(path);
  out << std::setprecision(17);
  const Mat3& r = t.rotation();
  for (int i = 0; i < 3; ++i) out << r(i, 0) << ' ' << r(i, 1) << ' ' << r(i, 2) << '\n';
  out << t.translation().x() << ' ' << t.translation().y() << ' ' << t.translation().z() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace regtr::io
