#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "motif/sim/types.hpp"

namespace motif {

/// Unit-disk reference pose for a task at normalized time t in [0,1]:
/// position, heading, and the gripper schedule (1 = open, 0 = closed).
struct UnitPose {
  double x = 0, y = 0, theta = 0, grip = 1;
};

inline constexpr double kGripRampWidth = 0.05;

/// Gripper schedule: open, linear close around close_t, closed, linear open
/// around open_t.
inline double gripper_schedule(const TaskSpec& task, double t) {
  const double w = kGripRampWidth;
  if (t < task.close_t) return 1.0;
  if (t < task.close_t + w) return 1.0 - (t - task.close_t) / w;
  if (t < task.open_t) return 0.0;
  if (t < task.open_t + w) return (t - task.open_t) / w;
  return 1.0;
}

inline UnitPose unit_profile(const TaskSpec& task, double t) {
  UnitPose u;
  switch (task.profile) {
    case 0: {  // straight slide
      const double ax = -0.65, ay = -0.10, bx = 0.65, by = 0.15;
      u.x = ax + (bx - ax) * t;
      u.y = ay + (by - ay) * t;
      u.theta = std::atan2(by - ay, bx - ax);
      break;
    }
    case 1: {  // circular sweep
      const double r = 0.6, p0 = -2.44, p1 = 0.35;
      double p = p0 + (p1 - p0) * t;
      u.x = r * std::cos(p);
      u.y = r * std::sin(p);
      u.theta = wrap_angle(p + M_PI / 2);
      break;
    }
    case 2: {  // L-shaped pull
      const double ax = -0.5, ay = 0.55, bx = -0.5, by = -0.35, cx = 0.55, cy = -0.35;
      const double l1 = std::hypot(bx - ax, by - ay), l2 = std::hypot(cx - bx, cy - by);
      double s = t * (l1 + l2);
      if (s <= l1) {
        double f = s / l1;
        u.x = ax + (bx - ax) * f;
        u.y = ay + (by - ay) * f;
        u.theta = std::atan2(by - ay, bx - ax);
      } else {
        double f = (s - l1) / l2;
        u.x = bx + (cx - bx) * f;
        u.y = by + (cy - by) * f;
        u.theta = std::atan2(cy - by, cx - bx);
      }
      break;
    }
    case 3: {  // sinusoidal carry
      u.x = -0.6 + 1.2 * t;
      u.y = 0.3 * std::sin(3.0 * M_PI * t);
      u.theta = std::atan2(0.9 * M_PI * std::cos(3.0 * M_PI * t), 1.2);
      break;
    }
    default:
      throw std::invalid_argument("unknown task profile");
  }
  u.grip = gripper_schedule(task, t);
  return u;
}

/// Normalized time at which the gripper crosses half-closed / half-open.
inline double grasp_time(const TaskSpec& task) { return task.close_t + kGripRampWidth / 2; }
inline double release_time(const TaskSpec& task) { return task.open_t + kGripRampWidth / 2; }

/// Map a unit-disk pose into an embodiment's world frame.
inline void world_from_unit(const EmbodimentSpec& emb, double ux, double uy, double utheta,
                            double& wx, double& wy, double& wtheta) {
  const double c = std::cos(emb.base_pose.theta), s = std::sin(emb.base_pose.theta);
  const double sx = emb.workspace_radius * ux, sy = emb.workspace_radius * uy;
  wx = emb.base_pose.x + c * sx - s * sy;
  wy = emb.base_pose.y + s * sx + c * sy;
  wtheta = wrap_angle(emb.base_pose.theta + utheta);
}

/// Movable object, target marker, and grasp state. Positions are world-frame.
struct Scene {
  double obj_x = 0, obj_y = 0;
  double tgt_x = 0, tgt_y = 0;
  bool grasped = false;
};

inline double grasp_radius(const EmbodimentSpec& emb) { return 0.10 * emb.workspace_radius; }

/// Decode an embodiment-specific action vector into a world-frame pose delta
/// plus gripper target.
inline void decode_action(const EmbodimentSpec& emb, const double* a, double& dx, double& dy,
                          double& dth, double& grip) {
  switch (emb.action_coding) {
    case 0:
      dx = a[0], dy = a[1], dth = a[2], grip = a[3];
      break;
    case 1: {
      const double c = std::cos(emb.base_pose.theta), s = std::sin(emb.base_pose.theta);
      dx = c * a[0] - s * a[1];
      dy = s * a[0] + c * a[1];
      dth = a[2], grip = a[3];
      break;
    }
    case 2:
      dx = a[0], dy = a[1], dth = a[2], grip = a[3];  // channels 4,5 unused
      break;
    default:
      throw std::invalid_argument("unknown action coding");
  }
}

/// Inverse of decode_action; writes action_dim values into a.
inline void encode_action(const EmbodimentSpec& emb, double dx, double dy, double dth, double grip,
                          double* a) {
  switch (emb.action_coding) {
    case 0:
      a[0] = dx, a[1] = dy, a[2] = dth, a[3] = grip;
      break;
    case 1: {
      const double c = std::cos(emb.base_pose.theta), s = std::sin(emb.base_pose.theta);
      a[0] = c * dx + s * dy;
      a[1] = -s * dx + c * dy;
      a[2] = dth, a[3] = grip;
      break;
    }
    case 2:
      a[0] = dx, a[1] = dy, a[2] = dth, a[3] = grip, a[4] = 0, a[5] = 0;
      break;
    default:
      throw std::invalid_argument("unknown action coding");
  }
}

/// Advance end-effector state and scene by one control step. The object
/// follows the gripper while grasped; grasping engages when the gripper
/// closes within grasp_radius of the object.
inline void env_step(const EmbodimentSpec& emb, const double* action, double state[4],
                     Scene& scene) {
  double dx, dy, dth, grip;
  decode_action(emb, action, dx, dy, dth, grip);
  state[0] += dx;
  state[1] += dy;
  // keep the end-effector inside the workspace disk
  double rx = state[0] - emb.base_pose.x, ry = state[1] - emb.base_pose.y;
  double r = std::hypot(rx, ry);
  if (r > emb.workspace_radius) {
    state[0] = emb.base_pose.x + rx * emb.workspace_radius / r;
    state[1] = emb.base_pose.y + ry * emb.workspace_radius / r;
  }
  state[2] = wrap_angle(state[2] + dth);
  state[3] = std::min(1.0, std::max(0.0, grip));

  const bool closed = state[3] < 0.5;
  if (scene.grasped) {
    if (!closed) {
      scene.grasped = false;  // release in place
    } else {
      scene.obj_x = state[0];
      scene.obj_y = state[1];
    }
  } else if (closed &&
             std::hypot(state[0] - scene.obj_x, state[1] - scene.obj_y) <= grasp_radius(emb)) {
    scene.grasped = true;
    scene.obj_x = state[0];
    scene.obj_y = state[1];
  }
}

/// Success: object released within the task tolerance of the target.
inline bool task_success(const TaskSpec& task, const EmbodimentSpec& emb, const Scene& scene,
                         double gripper) {
  if (scene.grasped || gripper < 0.5) return false;
  double eps = task.eps_unit * emb.workspace_radius;
  return std::hypot(scene.obj_x - scene.tgt_x, scene.obj_y - scene.tgt_y) <= eps;
}

inline constexpr long kObsGrid = 4;
inline constexpr long kObsDim = 8 + kObsGrid * kObsGrid;

/// Scene feature vector: object/target/end-effector poses in the embodiment's
/// normalized base frame plus a coarse occupancy grid over the unit square.
inline std::vector<double> observe(const EmbodimentSpec& emb, const double state[4],
                                   const Scene& scene) {
  auto to_base = [&](double wx, double wy, double& bx, double& by) {
    const double c = std::cos(emb.base_pose.theta), s = std::sin(emb.base_pose.theta);
    double rx = wx - emb.base_pose.x, ry = wy - emb.base_pose.y;
    bx = (c * rx + s * ry) / emb.workspace_radius;
    by = (-s * rx + c * ry) / emb.workspace_radius;
  };
  std::vector<double> o(kObsDim, 0.0);
  double ox, oy, tx, ty, ex, ey;
  to_base(scene.obj_x, scene.obj_y, ox, oy);
  to_base(scene.tgt_x, scene.tgt_y, tx, ty);
  to_base(state[0], state[1], ex, ey);
  o[0] = ox, o[1] = oy, o[2] = tx, o[3] = ty;
  o[4] = ex, o[5] = ey;
  o[6] = wrap_angle(state[2] - emb.base_pose.theta);
  o[7] = state[3];
  auto stamp = [&](double x, double y, double weight) {
    long cx = std::min<long>(kObsGrid - 1, std::max<long>(0, (long)((x + 1.0) / 2.0 * kObsGrid)));
    long cy = std::min<long>(kObsGrid - 1, std::max<long>(0, (long)((y + 1.0) / 2.0 * kObsGrid)));
    o[8 + cy * kObsGrid + cx] += weight;
  };
  stamp(ox, oy, 1.0);
  stamp(tx, ty, 2.0);
  stamp(ex, ey, 4.0);
  return o;
}

}  // namespace motif
