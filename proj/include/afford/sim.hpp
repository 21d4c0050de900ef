#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "afford/dataset.hpp"
#include "afford/rng.hpp"
#include "afford/scene.hpp"

namespace afford {

// Push geometry (meters).
inline constexpr double kPushRadius = 0.2;     // gripper start circle around the object
inline constexpr double kPushDistance = 0.05;  // commanded object displacement
inline constexpr double kHoverHeight = 0.15;   // gripper start height for top-down approaches
inline constexpr double kApproachEnd = 0.5;    // phase at which the transport begins
inline constexpr double kReachMargin = 0.05;   // workspace extends this far beyond the table
inline constexpr double kGraspLift = 0.30;
inline constexpr double kGraspAperture = 0.08;  // max graspable size
inline constexpr double kGraspSlipSize = 0.05;  // max graspable size for rollable objects
inline constexpr double kWrongPushTransportEnd = 0.85;
inline constexpr double kRollOffFactor = 0.5;   // extra roll as a fraction of the contact displacement

struct SimParams {
  int samples = 25;
  bool stochastic_slip = false;  // grasp failures scatter the object when set
  std::uint64_t slip_seed = 0;
};

inline bool grasp_succeeds(const ObjectSpec& o) {
  return o.size <= kGraspAperture && (!o.rollable() || o.size <= kGraspSlipSize);
}

// Object displacement along the push direction, as a function of phase.
// Approach [0, 0.5] leaves the object still; transport moves it linearly.
inline double push_displacement_at(double t) {
  if (t <= kApproachEnd) return 0.0;
  return kPushDistance * (t - kApproachEnd) / (1.0 - kApproachEnd);
}

// Plain push applied to a rollable object: the object tracks the gripper over
// a compressed transport window and then keeps rolling with decaying speed.
inline double wrong_push_displacement_at(double t) {
  if (t <= kApproachEnd) return 0.0;
  if (t <= kWrongPushTransportEnd)
    return kPushDistance * (t - kApproachEnd) / (kWrongPushTransportEnd - kApproachEnd);
  const double q = (1.0 - t) / (1.0 - kWrongPushTransportEnd);
  return kPushDistance * (1.0 + kRollOffFactor * (1.0 - q * q));
}

// Gripper-imparted displacement (the object may roll further than this).
inline double push_gripper_displacement_at(double t, bool wrong) {
  if (t <= kApproachEnd) return 0.0;
  if (!wrong) return kPushDistance * (t - kApproachEnd) / (1.0 - kApproachEnd);
  return kPushDistance * std::min(1.0, (t - kApproachEnd) / (kWrongPushTransportEnd - kApproachEnd));
}

// Action-channel encoding: (distance of the gripper tip from the object's
// initial position, gripper orientation). The side approach starts on the
// 0.2 m circle; the top-down caging approach starts 0.15 m above the object,
// so the two variants are distinguishable from the very first sample.
inline std::vector<float> push_action_value(Primitive variant, double theta, double contact_radius,
                                            double t, bool wrong) {
  double dist, orient;
  if (variant == Primitive::push_rollable) {
    if (t <= 0.25) {
      dist = kHoverHeight + (contact_radius - kHoverHeight) * (t / 0.25);
    } else if (t <= kApproachEnd) {
      dist = contact_radius;
    } else {
      dist = contact_radius + push_displacement_at(t);
    }
    const double ramp = std::clamp((t - 0.25) / 0.25, 0.0, 1.0);
    orient = theta + (M_PI / 4.0) * ramp;
  } else {
    if (t <= kApproachEnd) {
      dist = kPushRadius + (contact_radius - kPushRadius) * (t / kApproachEnd);
    } else {
      dist = std::abs(contact_radius - push_gripper_displacement_at(t, wrong));
    }
    orient = theta;
  }
  return {static_cast<float>(dist), static_cast<float>(orient)};
}

inline std::vector<float> grasp_action_value(double contact_radius, double t) {
  double dist;
  if (t <= 0.3) {
    dist = kHoverHeight + (contact_radius - kHoverHeight) * (t / 0.3);
  } else if (t <= kApproachEnd) {
    dist = contact_radius;
  } else {
    dist = contact_radius + kGraspLift * (t - kApproachEnd) / (1.0 - kApproachEnd);
  }
  const float open = t < 0.4 ? 1.0f : 0.0f;
  return {static_cast<float>(dist), open};
}

inline std::vector<float> rotate_action_value(double contact_radius, double angle, double t) {
  double dist;
  if (t <= 0.3) {
    dist = kHoverHeight + (contact_radius - kHoverHeight) * (t / 0.3);
  } else {
    dist = contact_radius;
  }
  return {static_cast<float>(dist), static_cast<float>(angle * t)};
}

// True iff the gripper start point and the full swept path stay within the
// table bounds inflated by the reach margin.
inline bool is_reachable(const Scene& scene, const ActionCommand& cmd) {
  const double lo = -kReachMargin, hi = kTableSize + kReachMargin;
  auto inside = [&](const Vec2& p) { return p.x >= lo && p.x <= hi && p.y >= lo && p.y <= hi; };
  switch (cmd.primitive) {
    case Primitive::grasp:
    case Primitive::rotate:
      return inside(scene.position);
    case Primitive::push_plain: {
      const Vec2 app{std::cos(cmd.theta), std::sin(cmd.theta)};
      const Vec2 tip_start = scene.position + app * kPushRadius;
      const double rho = scene.object.contact_radius();
      const bool wrong = scene.object.rollable();
      const Vec2 tip_end =
          scene.position + app * (rho - push_gripper_displacement_at(cmd.fraction, wrong));
      return inside(tip_start) && inside(tip_end);
    }
    case Primitive::push_rollable: {
      const Vec2 app{std::cos(cmd.theta), std::sin(cmd.theta)};
      const Vec2 tip_end = scene.position - app * push_displacement_at(cmd.fraction);
      return inside(scene.position) && inside(tip_end);
    }
  }
  return false;
}

namespace detail {

inline std::vector<float> planar_effect(const Vec2& d) {
  return {static_cast<float>(d.x), static_cast<float>(d.y)};
}

inline std::vector<float> spatial_effect(const Vec2& d, double dz) {
  return {static_cast<float>(d.x), static_cast<float>(d.y), static_cast<float>(dz)};
}

}  // namespace detail

// Executes a push and advances the scene. The returned trajectory is the
// exact prefix of the full-action trajectory (first ceil(fraction * samples)
// samples); the scene itself moves by the continuous displacement law
// evaluated at the fraction.
inline InteractionTrajectory exec_push_cmd(Scene& scene, const ActionCommand& cmd,
                                           const SimParams& params = {}) {
  scene.validate();
  cmd.validate();
  require(cmd.primitive == Primitive::push_plain || cmd.primitive == Primitive::push_rollable,
          "exec_push_cmd: not a push primitive");
  if (!is_reachable(scene, cmd))
    throw std::invalid_argument("push unreachable: start pose leaves the workspace");

  const bool wrong = cmd.primitive == Primitive::push_plain && scene.object.rollable();
  const Vec2 dir{-std::cos(cmd.theta), -std::sin(cmd.theta)};
  const double rho = scene.object.contact_radius();

  InteractionTrajectory tr;
  tr.object = scene.object;
  tr.start = scene.position;
  tr.command = cmd;
  tr.depth = render_depth(scene);

  const int n = params.samples;
  require(n >= 2, "samples must be >= 2");
  auto law = wrong ? wrong_push_displacement_at : push_displacement_at;
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / (n - 1);
    TrajectorySample s;
    s.t = static_cast<float>(t);
    s.action = push_action_value(cmd.primitive, cmd.theta, rho, t, wrong);
    s.effect = detail::planar_effect(dir * law(t));
    tr.samples.push_back(std::move(s));
  }
  const int keep = static_cast<int>(std::ceil(cmd.fraction * n));
  tr.samples.resize(static_cast<std::size_t>(std::max(1, keep)));

  scene.position = scene.position + dir * law(cmd.fraction);
  scene.validate();
  return tr;
}

inline InteractionTrajectory exec_push(Scene& scene, double theta, double fraction,
                                       const SimParams& params = {}) {
  ActionCommand cmd;
  cmd.primitive = scene.object.rollable() ? Primitive::push_rollable : Primitive::push_plain;
  cmd.theta = wrap_angle(theta);
  cmd.fraction = fraction;
  return exec_push_cmd(scene, cmd, params);
}

// Lower, close, lift. Success follows the deterministic aperture/slip rule;
// failures leave the object in place unless stochastic slip is enabled.
inline InteractionTrajectory exec_grasp(Scene& scene, const SimParams& params = {}) {
  scene.validate();
  ActionCommand cmd;
  cmd.primitive = Primitive::grasp;
  if (!is_reachable(scene, cmd)) throw std::invalid_argument("grasp unreachable");

  const bool success = grasp_succeeds(scene.object);
  const double rho = scene.object.contact_radius();
  Vec2 slip{0.0, 0.0};
  if (!success && params.stochastic_slip) {
    Rng rng(Rng::derive(params.slip_seed, 0x51a9ULL));
    const double mag = rng.uniform(0.0, 0.05);
    const double ang = rng.uniform(0.0, 2.0 * M_PI);
    slip = {mag * std::cos(ang), mag * std::sin(ang)};
  }

  InteractionTrajectory tr;
  tr.object = scene.object;
  tr.start = scene.position;
  tr.command = cmd;
  tr.depth = render_depth(scene);

  const int n = params.samples;
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / (n - 1);
    TrajectorySample s;
    s.t = static_cast<float>(t);
    s.action = grasp_action_value(rho, t);
    if (success) {
      const double dz = t <= kApproachEnd ? 0.0 : kGraspLift * (t - kApproachEnd) / (1.0 - kApproachEnd);
      s.effect = detail::spatial_effect({0.0, 0.0}, dz);
    } else {
      const double ramp = std::clamp((t - kApproachEnd) / 0.2, 0.0, 1.0);
      s.effect = detail::spatial_effect(slip * ramp, 0.0);
    }
    tr.samples.push_back(std::move(s));
  }

  if (success) {
    scene.height = kGraspLift;
  } else {
    scene.position = scene.position + slip;
  }
  scene.validate();
  return tr;
}

// Rotates a graspable object by the commanded angle, linear in phase. A
// non-graspable object is left untouched but the trajectory is still
// recorded.
inline InteractionTrajectory exec_rotate(Scene& scene, double angle, const SimParams& params = {}) {
  scene.validate();
  ActionCommand cmd;
  cmd.primitive = Primitive::rotate;
  cmd.rotate_angle = angle;
  if (!is_reachable(scene, cmd)) throw std::invalid_argument("rotate unreachable");

  const bool holds = grasp_succeeds(scene.object);
  const double rho = scene.object.contact_radius();

  InteractionTrajectory tr;
  tr.object = scene.object;
  tr.start = scene.position;
  tr.command = cmd;
  tr.depth = render_depth(scene);

  const int n = params.samples;
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / (n - 1);
    TrajectorySample s;
    s.t = static_cast<float>(t);
    s.action = rotate_action_value(rho, angle, t);
    s.effect = detail::spatial_effect({0.0, 0.0}, holds ? angle * t : 0.0);
    tr.samples.push_back(std::move(s));
  }

  if (holds) scene.object.yaw += angle;
  return tr;
}

inline InteractionTrajectory exec_command(Scene& scene, const ActionCommand& cmd,
                                          const SimParams& params = {}) {
  switch (cmd.primitive) {
    case Primitive::push_plain:
    case Primitive::push_rollable:
      return exec_push_cmd(scene, cmd, params);
    case Primitive::grasp:
      return exec_grasp(scene, params);
    case Primitive::rotate:
      return exec_rotate(scene, cmd.rotate_angle, params);
  }
  throw std::invalid_argument("exec_command: unknown primitive");
}

struct GenParams {
  int samples = 25;
  double wrong_push_prob = 0.25;  // plain pushes on rollable objects, for contrast
  bool stochastic_slip = false;
};

inline ObjectSpec random_object(Rng& rng) {
  ObjectSpec o;
  o.shape = static_cast<Shape>(rng.index(4));
  o.size = rng.uniform(0.02, 0.10);
  o.yaw = rng.uniform(0.0, 2.0 * M_PI);
  return o;
}

// Seeded dataset generation; trajectory i depends only on (master_seed, i),
// so generation order never matters.
inline Dataset gen_dataset(int count, ActionFamily family, std::uint64_t master_seed,
                           const GenParams& gp = {}) {
  require(count >= 1, "gen_dataset: count must be >= 1");
  Dataset ds;
  ds.family = family;
  ds.samples_per_traj = gp.samples;
  ds.trajectories.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng(Rng::derive(master_seed, static_cast<std::uint64_t>(i)));
    Scene scene;
    scene.object = random_object(rng);
    scene.position = {kTableCenter, kTableCenter};
    SimParams sp;
    sp.samples = gp.samples;
    sp.stochastic_slip = gp.stochastic_slip;
    sp.slip_seed = Rng::derive(master_seed, 0x1000000ULL + static_cast<std::uint64_t>(i));
    switch (family) {
      case ActionFamily::push: {
        ActionCommand cmd;
        cmd.theta = rng.uniform(0.0, 2.0 * M_PI);
        cmd.fraction = 1.0;
        const bool wrong = scene.object.rollable() && rng.coin(gp.wrong_push_prob);
        cmd.primitive = scene.object.rollable() && !wrong ? Primitive::push_rollable
                                                          : Primitive::push_plain;
        ds.trajectories.push_back(exec_push_cmd(scene, cmd, sp));
        break;
      }
      case ActionFamily::grasp:
        ds.trajectories.push_back(exec_grasp(scene, sp));
        break;
      case ActionFamily::rotate:
        ds.trajectories.push_back(exec_rotate(scene, rng.uniform(-M_PI / 2, M_PI / 2), sp));
        break;
    }
  }
  return ds;
}

}  // namespace afford
