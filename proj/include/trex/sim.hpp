#pragma once

// Deterministic kinematic world.
//
// The simulator executes waypoint trajectories with an abstract gripper and
// tracks simulated time; there is no dynamics.  Rules:
//   - `close` attaches the nearest movable object (or part) within the grasp
//     radius; the object then follows the gripper rigidly, except prismatic
//     objects, whose motion is projected onto their travel axis
//   - an attached object never supports anything, so a stack collapses when
//     an object is pulled out of it: unsupported objects fall straight down
//     onto the highest surface below (table or another object)
//   - `open` releases and the object settles the same way
//   - state machines advance when a displacement trigger fires
//   - observation visibility is an independent Bernoulli draw per call
//
// All randomness comes through explicit Rng arguments, so identical seeds
// give byte-identical behavior.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "trex/rng.hpp"
#include "trex/representation.hpp"
#include "trex/scene.hpp"

namespace trex {

struct SimConfig {
  double ee_speed = 0.25;           // m/s
  double ee_rot_speed = 1.5;        // rad/s
  double waypoint_overhead = 0.05;  // s per waypoint
  double gripper_time = 0.3;        // s per open/close actuation
  double grasp_radius = 0.02;       // m from gripper point to box surface
  double support_tol = 0.006;       // m vertical gap still counted as contact
  double penetration_allow = 0.012; // m overlap still counted as resting
  double footprint_expand = 0.01;   // m xy slack when testing support
};

inline Aabb world_aabb(const Pose& pose, const Vec3& extent) {
  return OrientedBox{pose, extent * 0.5}.bounds();
}

// Haar-uniform random rotation.
inline Rotation random_rotation(Rng& rng) {
  double q[4];
  for (double& c : q) c = rng.gaussian();
  return Rotation(q[0], q[1], q[2], q[3]);
}

class SimWorld {
 public:
  explicit SimWorld(Scene scene, SimConfig config = {})
      : initial_(std::move(scene)), config_(config) {
    reset();
  }

  const SimConfig& config() const { return config_; }
  const Scene& scene() const { return scene_; }
  const Aabb& workspace() const { return scene_.workspace; }
  double table_height() const { return scene_.table_height; }

  void reset() {
    scene_ = initial_;
    ee_pose_ = scene_.ee_home;
    gripper_ = Gripper::open;
    attached_.reset();
    attached_part_.clear();
    sim_time_ = 0.0;
    grasp_misses_ = 0;
    observe_calls_ = 0;
    occluded_calls_ = 0;
    machine_state_.clear();
    trigger_ref_.clear();
    prismatic_origin_.clear();
    for (const auto& o : scene_.objects) {
      if (o.state_machine) {
        machine_state_[o.id] = o.state_machine->initial;
        trigger_ref_[o.id] = o.pose;
      }
      if (o.prismatic) prismatic_origin_[o.id] = o.pose;
    }
  }

  // Resets, then draws fresh poses for the randomization targets.  Roots
  // (objects not resting on another target) get fresh positions; objects
  // stacked on a target follow it rigidly so authored stacks survive.
  void randomize(Rng& rng) {
    reset();
    if (!scene_.randomize) return;
    const RandomizeSpec& spec = *scene_.randomize;

    std::vector<std::string> targets = spec.objects;
    if (targets.empty()) {
      for (const auto& o : scene_.objects) {
        if (!o.is_static && !o.prismatic) targets.push_back(o.id);
      }
    }
    auto is_target = [&](const std::string& id) {
      return std::find(targets.begin(), targets.end(), id) != targets.end();
    };

    // Support chains from the authored layout decide who follows whom.
    std::map<std::string, std::string> root_of;
    for (const auto& id : targets) {
      std::string cur = id;
      for (;;) {
        auto sup = supporter_of(cur);
        if (!sup || !is_target(*sup)) break;
        cur = *sup;
      }
      root_of[id] = cur;
    }

    std::vector<std::pair<std::string, Pose>> placed;  // root id, new pose
    std::map<std::string, Pose> old_pose;
    for (const auto& id : targets) old_pose[id] = scene_.require(id).pose;

    for (const auto& id : targets) {
      if (root_of[id] != id) continue;
      SceneObject& obj = *scene_.find(id);
      const double radius =
          0.5 * std::sqrt(obj.extent.x * obj.extent.x + obj.extent.y * obj.extent.y);
      bool ok = false;
      for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
        Vec3 p{rng.uniform(spec.region.min.x, spec.region.max.x),
               rng.uniform(spec.region.min.y, spec.region.max.y),
               spec.settle ? obj.pose.translation.z
                           : rng.uniform(spec.region.min.z, spec.region.max.z)};
        Rotation r = spec.full_so3
                         ? random_rotation(rng)
                         : Rotation::from_axis_angle({0, 0, 1},
                                                     rng.uniform(0.0, 2.0 * kPi)) *
                               obj.pose.rotation;
        if (!spec.settle) {
          obj.pose = Pose(r, p);
          ok = true;
          break;
        }
        bool clear = true;
        for (const auto& [other_id, other_pose] : placed) {
          const SceneObject& other = scene_.require(other_id);
          const double other_radius =
              0.5 * std::sqrt(other.extent.x * other.extent.x +
                              other.extent.y * other.extent.y);
          const double dx = p.x - other_pose.translation.x;
          const double dy = p.y - other_pose.translation.y;
          if (std::sqrt(dx * dx + dy * dy) < radius + other_radius + 0.03) {
            clear = false;
            break;
          }
        }
        for (const auto& other : scene_.objects) {
          if (!clear) break;
          if (other.id == id || is_target(other.id)) continue;
          const Aabb box = world_aabb(other.pose, other.extent);
          if (p.x > box.min.x - radius - 0.03 && p.x < box.max.x + radius + 0.03 &&
              p.y > box.min.y - radius - 0.03 && p.y < box.max.y + radius + 0.03) {
            clear = false;
          }
        }
        if (clear) {
          obj.pose = Pose(r, p);
          ok = true;
        }
      }
      if (!ok) {
        throw Error("randomize: no collision-free placement for '" + id +
                    "' (region too small)");
      }
      placed.emplace_back(id, obj.pose);
    }

    // Children follow their root's rigid motion.
    for (const auto& id : targets) {
      const std::string& root = root_of[id];
      if (root == id) continue;
      const Pose delta =
          pose_compose(scene_.require(root).pose, pose_inverse(old_pose[root]));
      scene_.find(id)->pose = pose_compose(delta, old_pose[id]);
    }

    if (spec.settle) settle_all();
    for (auto& [id, ref] : trigger_ref_) ref = scene_.require(id).pose;
    for (auto& [id, origin] : prismatic_origin_) origin = scene_.require(id).pose;
  }

  // --- observation -------------------------------------------------------

  void set_occlusion_probability(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error("occlusion probability not in [0,1]");
    occlusion_prob_ = p;
  }
  double occlusion_probability() const { return occlusion_prob_; }

  // One camera observation attempt; false means the view was occluded.
  bool observe(Rng& rng) {
    ++observe_calls_;
    if (rng.bernoulli(occlusion_prob_)) {
      ++occluded_calls_;
      return false;
    }
    return true;
  }

  long observe_calls() const { return observe_calls_; }
  long occluded_calls() const { return occluded_calls_; }

  // --- ground truth ------------------------------------------------------

  Pose pose_of(const std::string& id) const { return scene_.require(id).pose; }

  Point3 center_of(const std::string& id, const std::string& part = "") const {
    return frame_of(id, part).translation;
  }

  Pose frame_of(const std::string& id, const std::string& part = "") const {
    const SceneObject& obj = scene_.require(id);
    if (part.empty()) return obj.pose;
    const PartSpec* ps = obj.find_part(part);
    if (!ps) throw LookupError("object '" + id + "' has no part '" + part + "'");
    return pose_compose(obj.pose, ps->offset);
  }

  Vec3 extent_of(const std::string& id, const std::string& part = "") const {
    const SceneObject& obj = scene_.require(id);
    if (part.empty()) return obj.extent;
    const PartSpec* ps = obj.find_part(part);
    if (!ps) throw LookupError("object '" + id + "' has no part '" + part + "'");
    return ps->extent;
  }

  std::vector<Point3> keypoints_world(const std::string& id,
                                      const std::string& part = "") const {
    const SceneObject& obj = scene_.require(id);
    const Pose frame = frame_of(id, part);
    const std::vector<Point3>& local =
        part.empty() ? obj.keypoints : obj.find_part(part)->keypoints;
    std::vector<Point3> out;
    out.reserve(local.size());
    for (const auto& kp : local) out.push_back(transform_point(frame, kp));
    return out;
  }

  // Direction ground truth: unit vector from the first keypoint to the second.
  VectorValue vector_gt(const std::string& id, const std::string& part = "") const {
    const auto kps = keypoints_world(id, part);
    if (kps.size() < 2) {
      throw LookupError("object '" + id + "'" +
                        (part.empty() ? "" : " part '" + part + "'") +
                        " declares no direction (needs 2 keypoints)");
    }
    return VectorValue{kps[0], UnitVector3(kps[1] - kps[0])};
  }

  RegionValue region_gt(const std::string& id, const std::string& part = "") const {
    const Aabb box = world_aabb(frame_of(id, part), extent_of(id, part));
    return RegionValue{(box.min + box.max) * 0.5, (box.max - box.min) * 0.5};
  }

  const std::string& machine_state(const std::string& id) const {
    auto it = machine_state_.find(id);
    if (it == machine_state_.end()) {
      throw LookupError("object '" + id + "' has no state machine");
    }
    return it->second;
  }

  const StateMachineSpec& machine_spec(const std::string& id) const {
    const SceneObject& obj = scene_.require(id);
    if (!obj.state_machine) {
      throw LookupError("object '" + id + "' has no state machine");
    }
    return *obj.state_machine;
  }

  // Direct supporter: the object this one rests on, nullopt for table/air.
  std::optional<std::string> supporter_of(const std::string& id) const {
    const SceneObject& obj = scene_.require(id);
    const Aabb box = world_aabb(obj.pose, obj.extent);
    const double bottom = box.min.z;
    std::optional<std::string> best;
    double best_top = -1e300;
    for (const auto& other : scene_.objects) {
      if (other.id == id) continue;
      if (attached_ && *attached_ == other.id) continue;
      const Aabb ob = world_aabb(other.pose, other.extent);
      if (obj.pose.translation.x < ob.min.x - config_.footprint_expand ||
          obj.pose.translation.x > ob.max.x + config_.footprint_expand ||
          obj.pose.translation.y < ob.min.y - config_.footprint_expand ||
          obj.pose.translation.y > ob.max.y + config_.footprint_expand) {
        continue;
      }
      if (std::abs(bottom - ob.max.z) <= config_.support_tol && ob.max.z > best_top) {
        best = other.id;
        best_top = ob.max.z;
      }
    }
    return best;
  }

  bool resting_on_table(const std::string& id) const {
    const SceneObject& obj = scene_.require(id);
    const Aabb box = world_aabb(obj.pose, obj.extent);
    return std::abs(box.min.z - scene_.table_height) <= config_.support_tol;
  }

  bool is_on(const std::string& top, const std::string& bottom) const {
    auto sup = supporter_of(top);
    return sup && *sup == bottom;
  }

  // Manipulation order over `ids`: anything stacked on another listed object
  // comes before it; ties break lexicographically.
  TopoOrderValue topo_order(const std::vector<std::string>& ids) const {
    std::map<std::string, int> on_top_count;  // objects resting on this one
    std::map<std::string, std::string> sup;
    for (const auto& id : ids) on_top_count[id] = 0;
    for (const auto& id : ids) {
      auto s = supporter_of(id);
      if (s && on_top_count.count(*s)) {
        sup[id] = *s;
        ++on_top_count[*s];
      }
    }
    TopoOrderValue out;
    std::vector<std::string> remaining = ids;
    std::sort(remaining.begin(), remaining.end());
    while (!remaining.empty()) {
      auto it = std::find_if(remaining.begin(), remaining.end(),
                             [&](const std::string& id) {
                               return on_top_count[id] == 0;
                             });
      if (it == remaining.end()) {
        throw Error("support graph has a cycle; cannot order objects");
      }
      const std::string id = *it;
      remaining.erase(it);
      auto s = sup.find(id);
      if (s != sup.end()) --on_top_count[s->second];
      out.object_ids.push_back(id);
    }
    return out;
  }

  // --- execution ---------------------------------------------------------

  const Pose& ee_pose() const { return ee_pose_; }
  Gripper gripper() const { return gripper_; }
  const std::optional<std::string>& attached() const { return attached_; }
  const std::string& attached_part() const { return attached_part_; }
  double sim_time() const { return sim_time_; }
  long grasp_misses() const { return grasp_misses_; }

  void advance_time(double dt) {
    if (dt < 0.0) throw Error("time cannot move backwards");
    sim_time_ += dt;
  }

  void execute_waypoint(const Waypoint& wp) {
    const double dist = (wp.pose.translation - ee_pose_.translation).norm();
    const double angle = rotation_geodesic(wp.pose.rotation, ee_pose_.rotation);
    sim_time_ += dist / config_.ee_speed + angle / config_.ee_rot_speed +
                 config_.waypoint_overhead;
    ee_pose_ = wp.pose;
    if (attached_) {
      update_attached_pose();
      settle_all();
      evaluate_triggers();
    }
    if (wp.gripper == Gripper::close && gripper_ != Gripper::close) {
      gripper_ = Gripper::close;
      sim_time_ += config_.gripper_time;
      try_attach();
      settle_all();
    } else if (wp.gripper == Gripper::open && gripper_ != Gripper::open) {
      gripper_ = Gripper::open;
      sim_time_ += config_.gripper_time;
      detach();
      settle_all();
      evaluate_triggers();
    }
  }

  void execute(const Trajectory& traj) {
    for (const auto& wp : traj.waypoints) execute_waypoint(wp);
  }

 private:
  void try_attach() {
    const Point3 tip = ee_pose_.translation;
    double best_dist = config_.grasp_radius;
    std::optional<std::string> best_id;
    std::string best_part;
    for (const auto& obj : scene_.objects) {
      if (obj.is_static) continue;
      const OrientedBox body{obj.pose, obj.extent * 0.5};
      double d = body.distance(tip);
      if (d < best_dist || (d == best_dist && best_id && obj.id < *best_id)) {
        best_dist = d;
        best_id = obj.id;
        best_part.clear();
      }
      for (const auto& part : obj.parts) {
        const OrientedBox pbox{pose_compose(obj.pose, part.offset),
                               part.extent * 0.5};
        d = pbox.distance(tip);
        if (d < best_dist) {
          best_dist = d;
          best_id = obj.id;
          best_part = part.id;
        }
      }
    }
    if (best_id) {
      attached_ = best_id;
      attached_part_ = best_part;
      grasp_offset_ =
          pose_compose(pose_inverse(ee_pose_), scene_.require(*best_id).pose);
    } else {
      ++grasp_misses_;
    }
  }

  void detach() {
    attached_.reset();
    attached_part_.clear();
  }

  void update_attached_pose() {
    SceneObject& obj = *scene_.find(*attached_);
    const Pose rigid = pose_compose(ee_pose_, grasp_offset_);
    if (obj.prismatic) {
      const Pose& origin = prismatic_origin_.at(obj.id);
      const Vec3 axis_w = normalized(origin.rotation.rotate(obj.prismatic->axis));
      double s = dot(rigid.translation - origin.translation, axis_w);
      s = std::clamp(s, obj.prismatic->min_travel, obj.prismatic->max_travel);
      obj.pose = Pose(origin.rotation, origin.translation + axis_w * s);
    } else {
      obj.pose = rigid;
    }
  }

  // Drops every unsupported movable object straight down onto the highest
  // surface below it.  Repeats until poses stop changing so collapsing stacks
  // re-stack bottom-up.
  void settle_all() {
    const std::size_t n = scene_.objects.size();
    for (std::size_t pass = 0; pass < n + 1; ++pass) {
      bool moved = false;
      std::vector<SceneObject*> order;
      for (auto& obj : scene_.objects) {
        if (obj.is_static || obj.prismatic) continue;
        if (attached_ && *attached_ == obj.id) continue;
        order.push_back(&obj);
      }
      std::sort(order.begin(), order.end(), [](auto* a, auto* b) {
        const double za = world_aabb(a->pose, a->extent).min.z;
        const double zb = world_aabb(b->pose, b->extent).min.z;
        return za != zb ? za < zb : a->id < b->id;
      });
      for (SceneObject* obj : order) {
        const Aabb box = world_aabb(obj->pose, obj->extent);
        const double half_height = 0.5 * (box.max.z - box.min.z);
        double top = scene_.table_height;
        for (const auto& other : scene_.objects) {
          if (other.id == obj->id) continue;
          if (attached_ && *attached_ == other.id) continue;
          const Aabb ob = world_aabb(other.pose, other.extent);
          if (obj->pose.translation.x < ob.min.x - config_.footprint_expand ||
              obj->pose.translation.x > ob.max.x + config_.footprint_expand ||
              obj->pose.translation.y < ob.min.y - config_.footprint_expand ||
              obj->pose.translation.y > ob.max.y + config_.footprint_expand) {
            continue;
          }
          if (ob.max.z <= box.min.z + config_.penetration_allow && ob.max.z > top) {
            top = ob.max.z;
          }
        }
        const double target_z = top + half_height;
        if (obj->pose.translation.z > target_z + 1e-12) {
          obj->pose.translation.z = target_z;
          moved = true;
        } else if (obj->pose.translation.z < target_z - 1e-12 &&
                   target_z - (obj->pose.translation.z - half_height) <=
                       half_height * 2.0 + config_.penetration_allow) {
          // Mild penetration from solver tolerance: pop up flush.
          obj->pose.translation.z = target_z;
          moved = true;
        }
      }
      if (!moved) break;
    }
  }

  void evaluate_triggers() {
    for (int guard = 0; guard < 8; ++guard) {
      bool fired = false;
      for (auto& obj : scene_.objects) {
        if (!obj.state_machine) continue;
        const StateMachineSpec& sm = *obj.state_machine;
        std::string& state = machine_state_[obj.id];
        Pose& ref = trigger_ref_[obj.id];
        for (const auto& tr : sm.triggers) {
          auto next = sm.next_state(state, tr.action);
          if (!next) continue;
          const Vec3 axis_w = normalized(ref.rotation.rotate(tr.axis));
          const double s = dot(obj.pose.translation - ref.translation, axis_w);
          if (s >= tr.min_distance) {
            state = *next;
            ref = obj.pose;
            fired = true;
            break;
          }
        }
      }
      if (!fired) return;
    }
  }

  Scene initial_;
  Scene scene_;
  SimConfig config_;
  Pose ee_pose_;
  Gripper gripper_ = Gripper::open;
  std::optional<std::string> attached_;
  std::string attached_part_;
  Pose grasp_offset_;
  double sim_time_ = 0.0;
  double occlusion_prob_ = 0.0;
  long grasp_misses_ = 0;
  long observe_calls_ = 0;
  long occluded_calls_ = 0;
  std::map<std::string, std::string> machine_state_;
  std::map<std::string, Pose> trigger_ref_;
  std::map<std::string, Pose> prismatic_origin_;
};

}  // namespace trex
