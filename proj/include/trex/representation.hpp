#pragma once

// Spatial representation values: the typed payloads extractors produce and
// constraints consume.  Seven kinds cover the extractor catalog: a single
// point, a point set, an anchored unit vector, a full pose, a crop region,
// a topological object ordering, and a reference into a task state machine.

#include <string>
#include <variant>
#include <vector>

#include "trex/errors.hpp"
#include "trex/geometry.hpp"
#include "trex/json_io.hpp"

namespace trex {

enum class RepKind {
  point,
  point_set,
  vector,
  pose,
  region,
  topo_order,
  state_machine_ref,
};

enum class Granularity { coarse, fine };

inline const char* granularity_name(Granularity g) {
  return g == Granularity::coarse ? "coarse" : "fine";
}

inline Granularity granularity_from_name(const std::string& name) {
  if (name == "coarse") return Granularity::coarse;
  if (name == "fine") return Granularity::fine;
  throw ParseError("unknown granularity '" + name + "'");
}

struct PointValue {
  Point3 point;
};

struct PointSetValue {
  std::vector<Point3> points;  // never empty
};

struct VectorValue {
  Point3 origin;
  UnitVector3 direction;
};

struct PoseValue {
  Pose pose;
};

// Axis-aligned crop box: the 3D analogue of a sub-image, consumed by the
// fine-granularity extraction path.
struct RegionValue {
  Point3 center;
  Vec3 half_extent;  // all components > 0
};

struct TopoOrderValue {
  std::vector<std::string> object_ids;  // most-constrained first
};

struct StateMachineRefValue {
  std::string machine_id;
  std::string state;
};

using RepresentationValue =
    std::variant<PointValue, PointSetValue, VectorValue, PoseValue,
                 RegionValue, TopoOrderValue, StateMachineRefValue>;

inline RepKind kind_of(const RepresentationValue& v) {
  struct Visitor {
    RepKind operator()(const PointValue&) const { return RepKind::point; }
    RepKind operator()(const PointSetValue&) const { return RepKind::point_set; }
    RepKind operator()(const VectorValue&) const { return RepKind::vector; }
    RepKind operator()(const PoseValue&) const { return RepKind::pose; }
    RepKind operator()(const RegionValue&) const { return RepKind::region; }
    RepKind operator()(const TopoOrderValue&) const { return RepKind::topo_order; }
    RepKind operator()(const StateMachineRefValue&) const {
      return RepKind::state_machine_ref;
    }
  };
  return std::visit(Visitor{}, v);
}

inline const char* rep_kind_name(RepKind k) {
  switch (k) {
    case RepKind::point:
      return "point";
    case RepKind::point_set:
      return "point_set";
    case RepKind::vector:
      return "vector";
    case RepKind::pose:
      return "pose";
    case RepKind::region:
      return "region";
    case RepKind::topo_order:
      return "topo_order";
    case RepKind::state_machine_ref:
      return "state_machine_ref";
  }
  throw Error("invalid representation kind");
}

inline RepKind rep_kind_from_name(const std::string& name) {
  for (RepKind k :
       {RepKind::point, RepKind::point_set, RepKind::vector, RepKind::pose,
        RepKind::region, RepKind::topo_order, RepKind::state_machine_ref}) {
    if (name == rep_kind_name(k)) return k;
  }
  throw ParseError("unknown representation kind '" + name + "'");
}

inline Point3 centroid(const PointSetValue& ps) {
  if (ps.points.empty()) throw Error("point set is empty");
  Vec3 sum;
  for (const auto& p : ps.points) sum += p;
  return sum / static_cast<double>(ps.points.size());
}

inline Json rep_value_to_json(const RepresentationValue& v) {
  Json j;
  j["kind"] = rep_kind_name(kind_of(v));
  struct Visitor {
    Json& j;
    void operator()(const PointValue& p) const { j["point"] = vec3_to_json(p.point); }
    void operator()(const PointSetValue& p) const {
      Json arr = Json::array();
      for (const auto& pt : p.points) arr.push_back(vec3_to_json(pt));
      j["points"] = arr;
    }
    void operator()(const VectorValue& p) const {
      j["origin"] = vec3_to_json(p.origin);
      j["direction"] = vec3_to_json(p.direction.vec());
    }
    void operator()(const PoseValue& p) const { j["pose"] = pose_to_json(p.pose); }
    void operator()(const RegionValue& p) const {
      j["center"] = vec3_to_json(p.center);
      j["half_extent"] = vec3_to_json(p.half_extent);
    }
    void operator()(const TopoOrderValue& p) const { j["order"] = p.object_ids; }
    void operator()(const StateMachineRefValue& p) const {
      j["machine"] = p.machine_id;
      j["state"] = p.state;
    }
  };
  std::visit(Visitor{j}, v);
  return j;
}

inline RepresentationValue rep_value_from_json(const Json& j,
                                               const std::string& where) {
  const RepKind kind = rep_kind_from_name(require_string(j, "kind", where));
  switch (kind) {
    case RepKind::point:
      return PointValue{vec3_from_json(require_field(j, "point", where), where)};
    case RepKind::point_set: {
      const Json& arr = require_field(j, "points", where);
      if (!arr.is_array() || arr.empty()) {
        throw ParseError(where + ": 'points' must be a non-empty array");
      }
      PointSetValue ps;
      for (const auto& e : arr) ps.points.push_back(vec3_from_json(e, where));
      return ps;
    }
    case RepKind::vector: {
      const Vec3 origin =
          vec3_from_json(require_field(j, "origin", where), where);
      const Vec3 dir =
          vec3_from_json(require_field(j, "direction", where), where);
      return VectorValue{origin, UnitVector3(dir)};
    }
    case RepKind::pose:
      return PoseValue{pose_from_json(require_field(j, "pose", where), where)};
    case RepKind::region: {
      const Vec3 c = vec3_from_json(require_field(j, "center", where), where);
      const Vec3 h =
          vec3_from_json(require_field(j, "half_extent", where), where);
      if (!(h.x > 0.0 && h.y > 0.0 && h.z > 0.0)) {
        throw ParseError(where + ": region half extents must be positive");
      }
      return RegionValue{c, h};
    }
    case RepKind::topo_order: {
      const Json& arr = require_field(j, "order", where);
      if (!arr.is_array()) throw ParseError(where + ": 'order' must be an array");
      TopoOrderValue t;
      for (const auto& e : arr) {
        if (!e.is_string()) throw ParseError(where + ": order entries must be ids");
        t.object_ids.push_back(e.get<std::string>());
      }
      return t;
    }
    case RepKind::state_machine_ref:
      return StateMachineRefValue{require_string(j, "machine", where),
                                  require_string(j, "state", where)};
  }
  throw Error("unreachable");
}

}  // namespace trex
