#pragma once

// Two on-disk point cloud formats:
//   ASCII PCD-style: header lines (FIELDS, POINTS, optional DATA ascii) then one
//     point per line. Fields x y z are required; normal_x normal_y normal_z are
//     picked up when present.
//   OT3D binary: "OT3D", u32 point count, then x y z as little-endian f32.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ot3d/binary_io.hpp"
#include "ot3d/error.hpp"
#include "ot3d/point_cloud.hpp"

namespace ot3d {

namespace detail {

inline std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline bool parse_double(const std::string& token, double& out) {
  const char* first = token.data();
  const char* last = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

inline bool starts_numeric(const std::string& token) {
  if (token.empty()) return false;
  const char c = token.front();
  return std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+' || c == '.';
}

}  // namespace detail

inline bool is_ot3d_binary(std::string_view data) {
  return data.size() >= 4 && data.substr(0, 4) == "OT3D";
}

inline PointCloud parse_pcd_ascii(std::string_view text) {
  std::vector<std::string> fields;
  long long declared_points = -1;
  std::size_t pos = 0;
  bool in_body = false;
  std::vector<std::vector<std::string>> rows;

  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    auto tokens = detail::split_ws(line);
    if (tokens.empty() || tokens.front().front() == '#') continue;

    if (!in_body) {
      const std::string& key = tokens.front();
      if (key == "FIELDS") {
        fields.assign(tokens.begin() + 1, tokens.end());
        continue;
      }
      if (key == "POINTS") {
        if (tokens.size() != 2) fail(ErrorCode::format_error, "malformed POINTS line");
        double n = 0;
        if (!detail::parse_double(tokens[1], n) || n < 0) {
          fail(ErrorCode::format_error, "malformed POINTS line");
        }
        declared_points = static_cast<long long>(n);
        continue;
      }
      if (key == "DATA") {
        if (tokens.size() < 2 || tokens[1] != "ascii") {
          fail(ErrorCode::format_error, "only DATA ascii is supported");
        }
        in_body = true;
        continue;
      }
      if (key == "VERSION" || key == "SIZE" || key == "TYPE" || key == "COUNT" || key == "WIDTH" ||
          key == "HEIGHT" || key == "VIEWPOINT") {
        continue;
      }
      if (!detail::starts_numeric(key)) {
        fail(ErrorCode::format_error, "unexpected header line '" + std::string(line) + "'");
      }
      in_body = true;
    }
    rows.push_back(std::move(tokens));
  }

  if (fields.empty()) fail(ErrorCode::format_error, "missing FIELDS header");
  if (declared_points < 0) fail(ErrorCode::format_error, "missing POINTS header");

  auto index_of = [&](std::string_view name) -> long {
    auto it = std::find(fields.begin(), fields.end(), name);
    return it == fields.end() ? -1 : static_cast<long>(it - fields.begin());
  };
  const long ix = index_of("x"), iy = index_of("y"), iz = index_of("z");
  if (ix < 0 || iy < 0 || iz < 0) fail(ErrorCode::format_error, "FIELDS must include x y z");
  const long inx = index_of("normal_x"), iny = index_of("normal_y"), inz = index_of("normal_z");
  const bool with_normals = inx >= 0 && iny >= 0 && inz >= 0;

  if (static_cast<long long>(rows.size()) != declared_points) {
    fail(ErrorCode::format_error, "POINTS declares " + std::to_string(declared_points) +
                                      " points but body has " + std::to_string(rows.size()));
  }

  PointCloud cloud;
  cloud.points.reserve(rows.size());
  bool normals_ok = with_normals;
  for (const auto& row : rows) {
    if (row.size() < fields.size()) fail(ErrorCode::format_error, "short point row");
    double x, y, z;
    if (!detail::parse_double(row[ix], x) || !detail::parse_double(row[iy], y) ||
        !detail::parse_double(row[iz], z)) {
      fail(ErrorCode::format_error, "non-numeric coordinate");
    }
    const Point3 p(x, y, z);
    if (!p.allFinite()) fail(ErrorCode::format_error, "non-finite coordinate");
    cloud.points.push_back(p);
    if (normals_ok) {
      double nx, ny, nz;
      if (!detail::parse_double(row[inx], nx) || !detail::parse_double(row[iny], ny) ||
          !detail::parse_double(row[inz], nz)) {
        normals_ok = false;
        continue;
      }
      Point3 n(nx, ny, nz);
      const double len = n.norm();
      if (!std::isfinite(len) || len < 1e-12) {
        normals_ok = false;
        continue;
      }
      cloud.normals.push_back(n / len);
    }
  }
  if (!normals_ok) cloud.normals.clear();
  return cloud;
}

inline PointCloud parse_ot3d_binary(std::string_view data) {
  binary::Reader in(data);
  in.expect_magic("OT3D");
  const std::uint32_t n = in.u32();
  in.need_items(n, 12);
  PointCloud cloud;
  cloud.points.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const double x = in.f32(), y = in.f32(), z = in.f32();
    const Point3 p(x, y, z);
    if (!p.allFinite()) fail(ErrorCode::format_error, "non-finite coordinate");
    cloud.points.push_back(p);
  }
  if (!in.done()) fail(ErrorCode::format_error, "trailing bytes after OT3D payload");
  return cloud;
}

/// Detects the format from the leading magic.
inline PointCloud parse_cloud(std::string_view data) {
  return is_ot3d_binary(data) ? parse_ot3d_binary(data) : parse_pcd_ascii(data);
}

inline std::string encode_ot3d_binary(const PointCloud& cloud) {
  binary::Writer out;
  out.magic("OT3D");
  out.u32(static_cast<std::uint32_t>(cloud.size()));
  for (const auto& p : cloud.points) {
    out.f32(static_cast<float>(p.x()));
    out.f32(static_cast<float>(p.y()));
    out.f32(static_cast<float>(p.z()));
  }
  return out.take();
}

inline std::string encode_pcd_ascii(const PointCloud& cloud) {
  const bool normals = cloud.has_normals();
  std::ostringstream os;
  os.precision(9);
  os << "# .PCD v0.7\nVERSION 0.7\n";
  if (normals) {
    os << "FIELDS x y z normal_x normal_y normal_z\nSIZE 4 4 4 4 4 4\nTYPE F F F F F F\n"
          "COUNT 1 1 1 1 1 1\n";
  } else {
    os << "FIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\n";
  }
  os << "WIDTH " << cloud.size() << "\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS " << cloud.size()
     << "\nDATA ascii\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    os << p.x() << ' ' << p.y() << ' ' << p.z();
    if (normals) {
      const auto& n = cloud.normals[i];
      os << ' ' << n.x() << ' ' << n.y() << ' ' << n.z();
    }
    os << '\n';
  }
  return os.str();
}

inline PointCloud read_cloud_file(const std::string& path) {
  try {
    return parse_cloud(binary::read_file(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::io_error) throw;
    throw Error(e.code(), path + ": " + e.what());
  }
}

/// Writes OT3D binary when the path ends in ".ot3d", ASCII PCD otherwise.
inline void write_cloud_file(const std::string& path, const PointCloud& cloud) {
  const bool binary_out = path.size() >= 5 && path.substr(path.size() - 5) == ".ot3d";
  binary::write_file(path, binary_out ? encode_ot3d_binary(cloud) : encode_pcd_ascii(cloud));
}

}  // namespace ot3d
