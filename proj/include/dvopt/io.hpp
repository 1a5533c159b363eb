#ifndef DVOPT_IO_HPP
#define DVOPT_IO_HPP

// File formats: binary PPM (color), PFM (float depth, little-endian,
// bottom-up), PGM (masks), trajectory files in timestamped quaternion and
// 3x4-matrix-per-line forms, an intrinsics file, RFC-4180 CSV, and a flat
// key = value config grammar. All writers go through an atomic
// temp-then-rename path so partial files never appear under the final name.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvopt/camera.hpp"
#include "dvopt/image.hpp"
#include "dvopt/se3.hpp"
#include "dvopt/strfmt.hpp"
#include "dvopt/trajectory.hpp"

namespace dvopt {

// ---------------------------------------------------------------------------
// Raw file helpers

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error(path + ": cannot open for reading");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes content to a sibling temp file, then renames over the target, so a
// crash mid-write never leaves a truncated file under the final name.
inline void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw std::runtime_error(tmp + ": cannot open for writing");
    }
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) {
      throw std::runtime_error(tmp + ": write failed");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw std::runtime_error(path + ": rename failed: " + ec.message());
  }
}

// ---------------------------------------------------------------------------
// PPM (binary P6, 8-bit color)

inline void write_ppm(const std::string& path, const ImageGrid& img) {
  require_shape(img, img.width, img.height, 3, "write_ppm image");
  std::string out = "P6\n" + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + img.data.size());
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        double v = img.at(x, y, c);
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        out.push_back(static_cast<char>(
            static_cast<unsigned char>(std::lround(v * 255.0))));
      }
    }
  }
  write_file_atomic(path, out);
}

namespace detail {

// Reads one whitespace-delimited PNM header token, skipping '#' comments.
inline std::string pnm_token(const std::string& bytes, std::size_t& pos,
                             const std::string& path) {
  while (pos < bytes.size()) {
    char ch = bytes[pos];
    if (ch == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') {
      ++pos;
    } else {
      break;
    }
  }
  std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    ++pos;
  }
  if (start == pos) {
    throw std::runtime_error(path + ": truncated header");
  }
  return bytes.substr(start, pos - start);
}

inline int pnm_int(const std::string& bytes, std::size_t& pos, const std::string& path) {
  const std::string tok = pnm_token(bytes, pos, path);
  try {
    std::size_t used = 0;
    int v = std::stoi(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(path + ": bad header number \"" + tok + "\"");
  }
}

}  // namespace detail

inline ImageGrid read_ppm(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  std::size_t pos = 0;
  if (detail::pnm_token(bytes, pos, path) != "P6") {
    throw std::runtime_error(path + ": not a binary PPM (P6) file");
  }
  const int w = detail::pnm_int(bytes, pos, path);
  const int h = detail::pnm_int(bytes, pos, path);
  const int maxval = detail::pnm_int(bytes, pos, path);
  if (w <= 0 || h <= 0 || maxval != 255) {
    throw std::runtime_error(path + ": unsupported PPM dimensions or maxval");
  }
  ++pos;  // single whitespace byte after maxval
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() - pos < need) {
    throw std::runtime_error(path + ": pixel data truncated");
  }
  ImageGrid img(w, h, 3);
  for (std::size_t i = 0; i < need; ++i) {
    img.data[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
  }
  return img;
}

// ---------------------------------------------------------------------------
// PGM (binary P5, 8-bit gray; used for masks)

inline void write_pgm(const std::string& path, const ImageGrid& img) {
  require_shape(img, img.width, img.height, 1, "write_pgm image");
  std::string out = "P5\n" + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double v = img.at(x, y, 0);
      v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      out.push_back(static_cast<char>(
          static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
  write_file_atomic(path, out);
}

inline ImageGrid read_pgm(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  std::size_t pos = 0;
  if (detail::pnm_token(bytes, pos, path) != "P5") {
    throw std::runtime_error(path + ": not a binary PGM (P5) file");
  }
  const int w = detail::pnm_int(bytes, pos, path);
  const int h = detail::pnm_int(bytes, pos, path);
  const int maxval = detail::pnm_int(bytes, pos, path);
  if (w <= 0 || h <= 0 || maxval != 255) {
    throw std::runtime_error(path + ": unsupported PGM dimensions or maxval");
  }
  ++pos;
  const std::size_t need = static_cast<std::size_t>(w) * h;
  if (bytes.size() - pos < need) {
    throw std::runtime_error(path + ": pixel data truncated");
  }
  ImageGrid img(w, h, 1);
  for (std::size_t i = 0; i < need; ++i) {
    img.data[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
  }
  return img;
}

// ---------------------------------------------------------------------------
// PFM (grayscale float32, scale -1.0 = little-endian, rows stored bottom-up)

inline void write_pfm(const std::string& path, const ImageGrid& img) {
  require_shape(img, img.width, img.height, 1, "write_pfm image");
  std::string out = "Pf\n" + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n-1.0\n";
  out.reserve(out.size() + img.data.size() * 4);
  for (int y = img.height - 1; y >= 0; --y) {
    for (int x = 0; x < img.width; ++x) {
      const float f = static_cast<float>(img.at(x, y, 0));
      std::uint32_t bits = 0;
      std::memcpy(&bits, &f, 4);
      out.push_back(static_cast<char>(bits & 0xff));
      out.push_back(static_cast<char>((bits >> 8) & 0xff));
      out.push_back(static_cast<char>((bits >> 16) & 0xff));
      out.push_back(static_cast<char>((bits >> 24) & 0xff));
    }
  }
  write_file_atomic(path, out);
}

inline ImageGrid read_pfm(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  std::size_t pos = 0;
  if (detail::pnm_token(bytes, pos, path) != "Pf") {
    throw std::runtime_error(path + ": not a grayscale PFM (Pf) file");
  }
  const int w = detail::pnm_int(bytes, pos, path);
  const int h = detail::pnm_int(bytes, pos, path);
  const std::string scale_tok = detail::pnm_token(bytes, pos, path);
  double scale = 0.0;
  try {
    scale = std::stod(scale_tok);
  } catch (const std::exception&) {
    throw std::runtime_error(path + ": bad PFM scale \"" + scale_tok + "\"");
  }
  if (w <= 0 || h <= 0 || scale == 0.0) {
    throw std::runtime_error(path + ": unsupported PFM header");
  }
  const bool little_endian = scale < 0.0;
  ++pos;
  const std::size_t need = static_cast<std::size_t>(w) * h * 4;
  if (bytes.size() - pos < need) {
    throw std::runtime_error(path + ": pixel data truncated");
  }
  ImageGrid img(w, h, 1);
  std::size_t off = pos;
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x) {
      std::uint32_t bits = 0;
      const auto b0 = static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off]));
      const auto b1 = static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 1]));
      const auto b2 = static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 2]));
      const auto b3 = static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 3]));
      bits = little_endian ? (b0 | (b1 << 8) | (b2 << 16) | (b3 << 24))
                           : (b3 | (b2 << 8) | (b1 << 16) | (b0 << 24));
      float f = 0.0f;
      std::memcpy(&f, &bits, 4);
      img.at(x, y, 0) = static_cast<double>(f);
      off += 4;
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Trajectories
//
// Two line formats are supported:
//  - 8 columns:  timestamp tx ty tz qx qy qz qw          (quaternion form)
//  - 12 columns: row-major 3x4 [R|t], implicit timestamps (matrix form)
// The reader distinguishes them by the column count of the first data line.

inline std::string serialize_trajectory_tum(const Trajectory& traj) {
  std::string out;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const auto& e = traj[i];
    const Eigen::Vector4d q = rot_to_quat(e.pose.R);
    out += detail::format_g17(e.timestamp);
    for (int k = 0; k < 3; ++k) out += " " + detail::format_g17(e.pose.t(k));
    for (int k = 0; k < 4; ++k) out += " " + detail::format_g17(q(k));
    out += "\n";
  }
  return out;
}

inline std::string serialize_trajectory_kitti(const Trajectory& traj) {
  std::string out;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const auto& e = traj[i];
    bool first = true;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        const double v = c < 3 ? e.pose.R(r, c) : e.pose.t(r);
        if (!first) out += " ";
        out += detail::format_g17(v);
        first = false;
      }
    }
    out += "\n";
  }
  return out;
}

inline void write_trajectory_tum(const std::string& path, const Trajectory& traj) {
  write_file_atomic(path, serialize_trajectory_tum(traj));
}

inline void write_trajectory_kitti(const std::string& path, const Trajectory& traj) {
  write_file_atomic(path, serialize_trajectory_kitti(traj));
}

inline Trajectory parse_trajectory(const std::string& text, const std::string& source) {
  Trajectory traj;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  int columns = 0;
  int implicit_index = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = detail::trim(raw);
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> v;
    if (!detail::split_numbers(line, v)) {
      throw std::runtime_error(source + ": line " + std::to_string(line_no) +
                               ": malformed number");
    }
    if (columns == 0) {
      if (v.size() != 8 && v.size() != 12) {
        throw std::runtime_error(source + ": line " + std::to_string(line_no) +
                                 ": expected 8 or 12 columns, got " +
                                 std::to_string(v.size()));
      }
      columns = static_cast<int>(v.size());
    } else if (v.size() != static_cast<std::size_t>(columns)) {
      throw std::runtime_error(source + ": line " + std::to_string(line_no) +
                               ": expected " + std::to_string(columns) +
                               " columns, got " + std::to_string(v.size()));
    }
    PoseSE3 pose;
    double ts = 0.0;
    if (columns == 8) {
      ts = v[0];
      pose.t = Eigen::Vector3d(v[1], v[2], v[3]);
      try {
        pose.R = quat_to_rot(v[4], v[5], v[6], v[7]);
      } catch (const std::exception& e) {
        throw std::runtime_error(source + ": line " + std::to_string(line_no) +
                                 ": " + e.what());
      }
    } else {
      ts = static_cast<double>(implicit_index);
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) pose.R(r, c) = v[static_cast<std::size_t>(r * 4 + c)];
        pose.t(r) = v[static_cast<std::size_t>(r * 4 + 3)];
      }
      if (pose.orthonormality_drift() > 1e-9) pose.orthonormalize();
    }
    try {
      traj.append(ts, pose);
    } catch (const std::exception& e) {
      throw std::runtime_error(source + ": line " + std::to_string(line_no) +
                               ": " + e.what());
    }
    ++implicit_index;
  }
  return traj;
}

inline Trajectory read_trajectory(const std::string& path) {
  return parse_trajectory(read_file_bytes(path), path);
}

// ---------------------------------------------------------------------------
// Intrinsics file: four whitespace-separated numbers "fx fy cx cy".

inline Intrinsics parse_intrinsics(const std::string& text, const std::string& source) {
  std::vector<double> v;
  std::string data;
  std::istringstream in(text);
  std::string raw;
  while (std::getline(in, raw)) {
    const std::string line = detail::trim(raw);
    if (line.empty() || line[0] == '#') continue;
    data += line + " ";
  }
  if (!detail::split_numbers(data, v) || v.size() != 4) {
    throw std::runtime_error(source + ": expected four numbers fx fy cx cy");
  }
  if (!(v[0] > 0.0) || !(v[1] > 0.0)) {
    throw std::runtime_error(source + ": focal lengths must be positive");
  }
  return Intrinsics{v[0], v[1], v[2], v[3]};
}

inline Intrinsics read_intrinsics(const std::string& path) {
  return parse_intrinsics(read_file_bytes(path), path);
}

inline void write_intrinsics(const std::string& path, const Intrinsics& k) {
  write_file_atomic(path, detail::format_g17(k.fx) + " " + detail::format_g17(k.fy) +
                              " " + detail::format_g17(k.cx) + " " +
                              detail::format_g17(k.cy) + "\n");
}

// ---------------------------------------------------------------------------
// CSV (RFC 4180: CRLF line endings, quoting only where needed)

inline std::string csv_escape(const std::string& field) {
  const bool needs_quotes = field.find_first_of(",\"\r\n") != std::string::npos;
  if (!needs_quotes) return field;
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out += "\"\"";
    else out.push_back(ch);
  }
  out += "\"";
  return out;
}

inline std::string serialize_csv(const std::vector<std::string>& header,
                                 const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  auto emit_row = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ",";
      out += csv_escape(row[i]);
    }
    out += "\r\n";
  };
  emit_row(header);
  for (const auto& row : rows) {
    if (row.size() != header.size()) {
      throw std::invalid_argument("serialize_csv: row width " +
                                  std::to_string(row.size()) +
                                  " does not match header width " +
                                  std::to_string(header.size()));
    }
    emit_row(row);
  }
  return out;
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  write_file_atomic(path, serialize_csv(header, rows));
}

// ---------------------------------------------------------------------------
// Config: flat "key = value" lines, '#' comments, blank lines ignored.

struct ConfigEntry {
  std::string key;
  std::string value;
  int line = 0;
};

inline std::vector<ConfigEntry> parse_config(const std::string& text,
                                             const std::string& source) {
  std::vector<ConfigEntry> out;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = detail::trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(source + ": line " + std::to_string(line_no) +
                               ": expected key = value");
    }
    ConfigEntry e;
    e.key = detail::trim(line.substr(0, eq));
    e.value = detail::trim(line.substr(eq + 1));
    e.line = line_no;
    if (e.key.empty()) {
      throw std::runtime_error(source + ": line " + std::to_string(line_no) +
                               ": empty key");
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline std::string serialize_config(const std::vector<ConfigEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    out += e.key + " = " + e.value + "\n";
  }
  return out;
}

inline std::vector<ConfigEntry> read_config(const std::string& path) {
  return parse_config(read_file_bytes(path), path);
}

}  // namespace dvopt

#endif  // DVOPT_IO_HPP
