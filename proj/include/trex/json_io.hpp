#pragma once

// JSON codecs for the geometry types plus small helpers for reading
// documents with actionable diagnostics.
//
// Pose wire format: a 4x4 homogeneous matrix in row-major order (16 numbers,
// last row 0 0 0 1).  Readers also accept the object form
//   {"translation": [x,y,z], "quaternion": [w,x,y,z]}
// so fixtures can be written by hand.  Writers always emit the matrix form.

#include <array>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "trex/errors.hpp"
#include "trex/geometry.hpp"

namespace trex {

using Json = nlohmann::json;

inline Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open file: " + path);
  Json doc;
  try {
    in >> doc;
  } catch (const Json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), static_cast<std::size_t>(e.byte));
  }
  return doc;
}

inline void save_json_file(const std::string& path, const Json& doc) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open file for writing: " + path);
  out << doc.dump(2) << '\n';
}

inline const Json& require_field(const Json& doc, const std::string& key,
                                 const std::string& where) {
  auto it = doc.find(key);
  if (it == doc.end()) {
    throw ParseError(where + ": missing required field '" + key + "'");
  }
  return *it;
}

inline double require_number(const Json& doc, const std::string& key,
                             const std::string& where) {
  const Json& v = require_field(doc, key, where);
  if (!v.is_number()) {
    throw ParseError(where + ": field '" + key + "' must be a number");
  }
  return v.get<double>();
}

inline std::string require_string(const Json& doc, const std::string& key,
                                  const std::string& where) {
  const Json& v = require_field(doc, key, where);
  if (!v.is_string()) {
    throw ParseError(where + ": field '" + key + "' must be a string");
  }
  return v.get<std::string>();
}

inline Json vec3_to_json(const Vec3& v) { return Json::array({v.x, v.y, v.z}); }

inline Vec3 vec3_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3 || !j[0].is_number() ||
      !j[1].is_number() || !j[2].is_number()) {
    throw ParseError(where + ": expected an array of 3 numbers");
  }
  Vec3 v{j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
  if (!v.finite()) throw ParseError(where + ": components must be finite");
  return v;
}

inline Json pose_to_json(const Pose& p) {
  const auto m = p.rotation.matrix();
  Json rows = Json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) rows.push_back(m[r][c]);
    const double t[3] = {p.translation.x, p.translation.y, p.translation.z};
    rows.push_back(t[r]);
  }
  for (double v : {0.0, 0.0, 0.0, 1.0}) rows.push_back(v);
  return rows;
}

inline Pose pose_from_json(const Json& j, const std::string& where) {
  if (j.is_array()) {
    if (j.size() != 16) {
      throw ParseError(where + ": pose matrix must have 16 entries");
    }
    std::array<double, 16> m{};
    for (std::size_t i = 0; i < 16; ++i) {
      if (!j[i].is_number()) {
        throw ParseError(where + ": pose matrix entries must be numbers");
      }
      m[i] = j[i].get<double>();
      if (!std::isfinite(m[i])) {
        throw ParseError(where + ": pose matrix entries must be finite");
      }
    }
    if (m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0) {
      throw ParseError(where + ": pose matrix last row must be 0 0 0 1");
    }
    std::array<std::array<double, 3>, 3> rot{};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) rot[r][c] = m[static_cast<std::size_t>(r) * 4 + c];
    }
    Rotation rotation;
    try {
      rotation = Rotation::from_matrix(rot);
    } catch (const Error& e) {
      throw ParseError(where + ": " + e.what());
    }
    return Pose(rotation, {m[3], m[7], m[11]});
  }
  if (j.is_object()) {
    const Json& t = require_field(j, "translation", where);
    const Json& q = require_field(j, "quaternion", where);
    if (!q.is_array() || q.size() != 4) {
      throw ParseError(where + ": quaternion must be [w, x, y, z]");
    }
    const double w = q[0].get<double>(), x = q[1].get<double>(),
                 y = q[2].get<double>(), z = q[3].get<double>();
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    if (!std::isfinite(n) || std::abs(n - 1.0) > 1e-9) {
      throw ParseError(where + ": quaternion must have unit norm (within 1e-9)");
    }
    return Pose(Rotation(w, x, y, z), vec3_from_json(t, where + ".translation"));
  }
  throw ParseError(where + ": pose must be a 16-entry array or an object");
}

// Canonical serialization used for every report and exported file: sorted
// keys, two-space indent, trailing newline.  Byte-identical for equal values.
inline std::string canonical_dump(const Json& doc) {
  Json ordered = doc;  // nlohmann::json already sorts object keys
  std::ostringstream out;
  out << ordered.dump(2) << '\n';
  return out.str();
}

}  // namespace trex
