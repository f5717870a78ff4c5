#pragma once

// Static scene description: objects, parts, keypoints, state machines.
// Loaded from JSON fixtures; the kinematic world that mutates poses lives in
// sim.hpp.  World frame is right-handed, +z up, table top at `table_height`.

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "trex/errors.hpp"
#include "trex/geometry.hpp"
#include "trex/json_io.hpp"

namespace trex {

// Fires a state-machine action when the object has moved at least
// `min_distance` from its reference pose along `axis` (object-local).
struct TriggerSpec {
  std::string action;
  Vec3 axis;
  double min_distance = 0.0;
};

struct Transition {
  std::string from;
  std::string action;
  std::string to;
};

struct StateMachineSpec {
  std::string id;
  std::string initial;
  std::vector<std::string> states;
  std::vector<Transition> transitions;
  std::vector<TriggerSpec> triggers;

  bool has_state(const std::string& s) const {
    for (const auto& st : states) {
      if (st == s) return true;
    }
    return false;
  }

  std::optional<std::string> next_state(const std::string& from,
                                        const std::string& action) const {
    for (const auto& t : transitions) {
      if (t.from == from && t.action == action) return t.to;
    }
    return std::nullopt;
  }
};

// Restricts an object's motion to a line along `axis` (object-local, measured
// from the pose at reset) with travel clamped to [min_travel, max_travel].
struct PrismaticSpec {
  Vec3 axis{1.0, 0.0, 0.0};
  double min_travel = 0.0;
  double max_travel = 0.0;
};

struct PartSpec {
  std::string id;
  std::vector<std::string> labels;
  Pose offset;  // part frame relative to the object frame
  Vec3 extent{0.01, 0.01, 0.01};
  std::vector<Point3> keypoints;  // part frame
};

struct SceneObject {
  std::string id;
  std::string class_name;  // capability key, e.g. "block", "drawer"
  std::vector<std::string> labels;
  Pose pose;  // object frame origin at the collision-box center
  Vec3 extent{0.05, 0.05, 0.05};
  bool is_static = false;
  std::vector<Point3> keypoints;  // object frame
  std::vector<PartSpec> parts;
  std::optional<StateMachineSpec> state_machine;
  std::optional<PrismaticSpec> prismatic;

  const PartSpec* find_part(const std::string& part_id) const {
    for (const auto& p : parts) {
      if (p.id == part_id) return &p;
    }
    return nullptr;
  }
};

struct RandomizeSpec {
  Aabb region;
  bool settle = true;
  bool full_so3 = false;
  std::vector<std::string> objects;  // empty means every movable object
};

struct Scene {
  int schema = 1;
  std::string name;
  Aabb workspace;
  double table_height = 0.0;
  Pose ee_home;
  std::optional<RandomizeSpec> randomize;
  std::vector<SceneObject> objects;

  const SceneObject* find(const std::string& id) const {
    for (const auto& o : objects) {
      if (o.id == id) return &o;
    }
    return nullptr;
  }

  SceneObject* find(const std::string& id) {
    for (auto& o : objects) {
      if (o.id == id) return &o;
    }
    return nullptr;
  }

  const SceneObject& require(const std::string& id) const {
    const SceneObject* o = find(id);
    if (!o) throw LookupError("unknown object '" + id + "'");
    return *o;
  }
};

namespace detail {

inline std::string default_class_name(const SceneObject& obj) {
  if (!obj.labels.empty()) {
    const std::string& label = obj.labels.front();
    const auto pos = label.find_last_of(' ');
    return pos == std::string::npos ? label : label.substr(pos + 1);
  }
  return obj.id;
}

}  // namespace detail

inline Scene scene_from_json(const Json& doc, const std::string& where) {
  Scene scene;
  scene.schema = static_cast<int>(require_number(doc, "schema", where));
  if (scene.schema != 1) {
    throw ParseError(where + ": unsupported schema version " +
                     std::to_string(scene.schema));
  }
  scene.name = require_string(doc, "name", where);
  const Json& ws = require_field(doc, "workspace", where);
  scene.workspace.min = vec3_from_json(require_field(ws, "min", where), where);
  scene.workspace.max = vec3_from_json(require_field(ws, "max", where), where);
  if (!(scene.workspace.min.x < scene.workspace.max.x &&
        scene.workspace.min.y < scene.workspace.max.y &&
        scene.workspace.min.z < scene.workspace.max.z)) {
    throw ParseError(where + ": workspace min must be below max on every axis");
  }
  scene.table_height = require_number(doc, "table_height", where);
  scene.ee_home = pose_from_json(require_field(doc, "ee_home", where),
                                 where + ".ee_home");

  if (doc.contains("randomize")) {
    const Json& r = doc["randomize"];
    RandomizeSpec spec;
    const Json& region = require_field(r, "region", where + ".randomize");
    spec.region.min = vec3_from_json(require_field(region, "min", where), where);
    spec.region.max = vec3_from_json(require_field(region, "max", where), where);
    spec.settle = r.value("settle", true);
    spec.full_so3 = r.value("full_so3", false);
    if (r.contains("objects")) {
      for (const auto& e : r["objects"]) spec.objects.push_back(e.get<std::string>());
    }
    scene.randomize = spec;
  }

  const Json& objects = require_field(doc, "objects", where);
  if (!objects.is_array()) throw ParseError(where + ": 'objects' must be an array");
  std::set<std::string> seen;
  for (const auto& jo : objects) {
    SceneObject obj;
    obj.id = require_string(jo, "id", where);
    if (!seen.insert(obj.id).second) {
      throw ParseError(where + ": duplicate object id '" + obj.id + "'");
    }
    const std::string ctx = where + ".objects[" + obj.id + "]";
    if (jo.contains("labels")) {
      for (const auto& l : jo["labels"]) obj.labels.push_back(l.get<std::string>());
    }
    obj.class_name = jo.value("class", detail::default_class_name(obj));
    obj.pose = pose_from_json(require_field(jo, "pose", ctx), ctx + ".pose");
    obj.extent = vec3_from_json(require_field(jo, "extent", ctx), ctx + ".extent");
    if (!(obj.extent.x > 0.0 && obj.extent.y > 0.0 && obj.extent.z > 0.0)) {
      throw ParseError(ctx + ": extent components must be positive");
    }
    obj.is_static = jo.value("static", false);
    if (jo.contains("keypoints")) {
      for (const auto& kp : jo["keypoints"]) {
        obj.keypoints.push_back(vec3_from_json(kp, ctx + ".keypoints"));
      }
    }
    if (jo.contains("parts")) {
      std::set<std::string> part_seen;
      for (const auto& jp : jo["parts"]) {
        PartSpec part;
        part.id = require_string(jp, "id", ctx + ".parts");
        if (!part_seen.insert(part.id).second) {
          throw ParseError(ctx + ": duplicate part id '" + part.id + "'");
        }
        if (jp.contains("labels")) {
          for (const auto& l : jp["labels"]) part.labels.push_back(l.get<std::string>());
        }
        if (jp.contains("offset")) {
          part.offset = pose_from_json(jp["offset"], ctx + ".parts.offset");
        }
        if (jp.contains("extent")) {
          part.extent = vec3_from_json(jp["extent"], ctx + ".parts.extent");
        }
        if (jp.contains("keypoints")) {
          for (const auto& kp : jp["keypoints"]) {
            part.keypoints.push_back(vec3_from_json(kp, ctx + ".parts.keypoints"));
          }
        }
        obj.parts.push_back(std::move(part));
      }
    }
    if (jo.contains("state_machine")) {
      const Json& jm = jo["state_machine"];
      StateMachineSpec sm;
      sm.id = require_string(jm, "id", ctx + ".state_machine");
      sm.initial = require_string(jm, "initial", ctx + ".state_machine");
      for (const auto& s : require_field(jm, "states", ctx)) {
        sm.states.push_back(s.get<std::string>());
      }
      if (!sm.has_state(sm.initial)) {
        throw ParseError(ctx + ": initial state '" + sm.initial +
                         "' not in state list");
      }
      if (jm.contains("transitions")) {
        for (const auto& jt : jm["transitions"]) {
          Transition t{require_string(jt, "from", ctx),
                       require_string(jt, "action", ctx),
                       require_string(jt, "to", ctx)};
          if (!sm.has_state(t.from) || !sm.has_state(t.to)) {
            throw ParseError(ctx + ": transition references unknown state");
          }
          sm.transitions.push_back(std::move(t));
        }
      }
      if (jm.contains("triggers")) {
        for (const auto& jt : jm["triggers"]) {
          TriggerSpec tr;
          tr.action = require_string(jt, "action", ctx);
          tr.axis = vec3_from_json(require_field(jt, "axis", ctx), ctx);
          tr.min_distance = require_number(jt, "min_distance", ctx);
          if (!(tr.min_distance > 0.0)) {
            throw ParseError(ctx + ": trigger min_distance must be positive");
          }
          sm.triggers.push_back(std::move(tr));
        }
      }
      obj.state_machine = std::move(sm);
    }
    if (jo.contains("prismatic")) {
      const Json& jp = jo["prismatic"];
      PrismaticSpec pr;
      pr.axis = vec3_from_json(require_field(jp, "axis", ctx), ctx + ".prismatic");
      pr.min_travel = jp.value("min_travel", 0.0);
      pr.max_travel = require_number(jp, "max_travel", ctx + ".prismatic");
      if (!(pr.max_travel > pr.min_travel)) {
        throw ParseError(ctx + ": prismatic max_travel must exceed min_travel");
      }
      obj.prismatic = pr;
    }
    scene.objects.push_back(std::move(obj));
  }
  if (scene.randomize) {
    for (const auto& id : scene.randomize->objects) {
      if (!scene.find(id)) {
        throw ParseError(where + ": randomize lists unknown object '" + id + "'");
      }
    }
  }
  return scene;
}

inline Scene scene_load(const std::string& path) {
  return scene_from_json(load_json_file(path), path);
}

inline Json scene_to_json(const Scene& scene) {
  Json doc;
  doc["schema"] = scene.schema;
  doc["name"] = scene.name;
  doc["workspace"] = {{"min", vec3_to_json(scene.workspace.min)},
                      {"max", vec3_to_json(scene.workspace.max)}};
  doc["table_height"] = scene.table_height;
  doc["ee_home"] = pose_to_json(scene.ee_home);
  if (scene.randomize) {
    Json r;
    r["region"] = {{"min", vec3_to_json(scene.randomize->region.min)},
                   {"max", vec3_to_json(scene.randomize->region.max)}};
    r["settle"] = scene.randomize->settle;
    r["full_so3"] = scene.randomize->full_so3;
    if (!scene.randomize->objects.empty()) r["objects"] = scene.randomize->objects;
    doc["randomize"] = r;
  }
  Json arr = Json::array();
  for (const auto& o : scene.objects) {
    Json jo;
    jo["id"] = o.id;
    jo["class"] = o.class_name;
    if (!o.labels.empty()) jo["labels"] = o.labels;
    jo["pose"] = pose_to_json(o.pose);
    jo["extent"] = vec3_to_json(o.extent);
    jo["static"] = o.is_static;
    if (!o.keypoints.empty()) {
      Json kps = Json::array();
      for (const auto& kp : o.keypoints) kps.push_back(vec3_to_json(kp));
      jo["keypoints"] = kps;
    }
    if (!o.parts.empty()) {
      Json parts = Json::array();
      for (const auto& p : o.parts) {
        Json jp;
        jp["id"] = p.id;
        if (!p.labels.empty()) jp["labels"] = p.labels;
        jp["offset"] = pose_to_json(p.offset);
        jp["extent"] = vec3_to_json(p.extent);
        if (!p.keypoints.empty()) {
          Json kps = Json::array();
          for (const auto& kp : p.keypoints) kps.push_back(vec3_to_json(kp));
          jp["keypoints"] = kps;
        }
        parts.push_back(jp);
      }
      jo["parts"] = parts;
    }
    if (o.state_machine) {
      const auto& sm = *o.state_machine;
      Json jm;
      jm["id"] = sm.id;
      jm["initial"] = sm.initial;
      jm["states"] = sm.states;
      Json jt = Json::array();
      for (const auto& t : sm.transitions) {
        jt.push_back({{"from", t.from}, {"action", t.action}, {"to", t.to}});
      }
      jm["transitions"] = jt;
      Json jtr = Json::array();
      for (const auto& tr : sm.triggers) {
        jtr.push_back({{"action", tr.action},
                       {"axis", vec3_to_json(tr.axis)},
                       {"min_distance", tr.min_distance}});
      }
      jm["triggers"] = jtr;
      jo["state_machine"] = jm;
    }
    if (o.prismatic) {
      jo["prismatic"] = {{"axis", vec3_to_json(o.prismatic->axis)},
                         {"min_travel", o.prismatic->min_travel},
                         {"max_travel", o.prismatic->max_travel}};
    }
    arr.push_back(jo);
  }
  doc["objects"] = arr;
  return doc;
}

}  // namespace trex
