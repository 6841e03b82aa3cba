#pragma once

// Discrete-time CACC dynamics under a constant time-headway policy.
//
// Each follower i is described by the error state
//   x = [e_p, e_v, a_i, a_{i-1}]
// where e_p is the gap error against the desired headway r + h * v_i,
// e_v the velocity difference to the predecessor, and the two accelerations
// follow first-order drivetrain lags with time constants tau_i and tau_{i-1}.
// The continuous model is discretized with forward Euler at step T.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "fedplatoon/errors.hpp"

namespace fedplatoon {

struct VehicleParams {
  double tau = 0.1;     // drivetrain time constant [s]
  double h = 1.0;       // time gap [s]
  double r = 2.0;       // standstill distance [m]
  double length = 4.0;  // vehicle length [m]
  double u_max = 2.5;   // max absolute control input [m/s^2]

  void validate() const {
    if (!(tau > 0.0)) throw InvalidParameter("vehicle tau must be positive");
    if (!(h > 0.0)) throw InvalidParameter("vehicle time gap h must be positive");
    if (!(u_max > 0.0)) throw InvalidParameter("vehicle u_max must be positive");
    if (!(r >= 0.0)) throw InvalidParameter("vehicle standstill distance r must be non-negative");
    if (!(length >= 0.0)) throw InvalidParameter("vehicle length must be non-negative");
  }
};

// Error-state components, in the order the MDP observes them.
namespace state {
inline constexpr Eigen::Index kPositionError = 0;
inline constexpr Eigen::Index kVelocityError = 1;
inline constexpr Eigen::Index kAccel = 2;
inline constexpr Eigen::Index kPredAccel = 3;
inline constexpr Eigen::Index kDim = 4;
}  // namespace state

template <typename Scalar>
using ErrorStateT = Eigen::Matrix<Scalar, 4, 1>;
using ErrorState = ErrorStateT<double>;

template <typename Scalar>
ErrorStateT<Scalar> make_error_state(Scalar e_p, Scalar e_v, Scalar a, Scalar a_pred) {
  ErrorStateT<Scalar> x;
  x << e_p, e_v, a, a_pred;
  return x;
}

template <typename Scalar>
struct ContinuousMatricesT {
  Eigen::Matrix<Scalar, 4, 4> a;
  Eigen::Matrix<Scalar, 4, 1> b;
  Eigen::Matrix<Scalar, 4, 1> c;
};

template <typename Scalar>
struct DiscreteMatricesT {
  Eigen::Matrix<Scalar, 4, 4> a_d;
  Eigen::Matrix<Scalar, 4, 1> b_d;
  Eigen::Matrix<Scalar, 4, 1> c_d;
  Scalar step;
};
using DiscreteMatrices = DiscreteMatricesT<double>;

namespace detail {
inline void require_positive_timing(double step, double tau_own, double tau_pred) {
  if (!(step > 0.0) || !std::isfinite(step)) throw InvalidParameter("step time must be positive");
  if (!(tau_own > 0.0)) throw InvalidParameter("own tau must be positive");
  if (!(tau_pred > 0.0)) throw InvalidParameter("predecessor tau must be positive");
}
}  // namespace detail

// x_dot = A x + B u + C u_pred
template <typename Scalar = double>
ContinuousMatricesT<Scalar> continuous_matrices(const VehicleParams& own, const VehicleParams& pred) {
  detail::require_positive_timing(1.0, own.tau, pred.tau);
  const Scalar inv_tau = Scalar(1) / Scalar(own.tau);
  const Scalar inv_tau_pred = Scalar(1) / Scalar(pred.tau);
  ContinuousMatricesT<Scalar> m;
  m.a << 0, 1, -Scalar(own.h), 0,
         0, 0, -1, 1,
         0, 0, -inv_tau, 0,
         0, 0, 0, -inv_tau_pred;
  m.b << 0, 0, inv_tau, 0;
  m.c << 0, 0, 0, inv_tau_pred;
  return m;
}

template <typename Scalar = double>
DiscreteMatricesT<Scalar> build_discrete_matrices(const VehicleParams& own, const VehicleParams& pred,
                                                  Scalar step) {
  detail::require_positive_timing(double(step), own.tau, pred.tau);
  const Scalar t = step;
  const Scalar inv_tau = Scalar(1) / Scalar(own.tau);
  const Scalar inv_tau_pred = Scalar(1) / Scalar(pred.tau);
  DiscreteMatricesT<Scalar> m;
  m.a_d << 1, t, -(t * Scalar(own.h)), 0,
           0, 1, -t, t,
           0, 0, Scalar(1) - t * inv_tau, 0,
           0, 0, 0, Scalar(1) - t * inv_tau_pred;
  m.b_d << 0, 0, t * inv_tau, 0;
  m.c_d << 0, 0, 0, t * inv_tau_pred;
  m.step = t;
  return m;
}

template <typename Scalar>
ErrorStateT<Scalar> step_error_state(const DiscreteMatricesT<Scalar>& m, const ErrorStateT<Scalar>& x,
                                     Scalar u, Scalar u_pred) {
  if (!x.allFinite() || !std::isfinite(u) || !std::isfinite(u_pred)) {
    throw NumericDomainError("step_error_state: non-finite state or input");
  }
  return m.a_d * x + m.b_d * u + m.c_d * u_pred;
}

struct RewardCoeffs {
  double a_c = 0.4;
  double b_c = 0.2;
  double c_c = 0.2;
  double d_c = 0.2;
  double max_ep = 15.0;
  double max_ev = 10.0;
  double max_u = 2.5;
  double max_a = 2.5;

  void validate() const {
    if (a_c < 0 || b_c < 0 || c_c < 0 || d_c < 0) throw InvalidParameter("reward weights must be non-negative");
    if (!(max_ep > 0) || !(max_ev > 0) || !(max_u > 0) || !(max_a > 0)) {
      throw InvalidParameter("reward normalizers must be positive");
    }
  }
};

// Jerk is the backward difference (a_k - a_prev) / step.
template <typename Scalar>
Scalar jerk(const ErrorStateT<Scalar>& x, Scalar a_prev, Scalar step) {
  return (x[state::kAccel] - a_prev) / step;
}

// Negative weighted sum of normalized |e_p|, |e_v|, |u| and |jerk|; never positive.
template <typename Scalar>
Scalar reward(const ErrorStateT<Scalar>& x, Scalar u, Scalar a_prev, const RewardCoeffs& k, Scalar step) {
  k.validate();
  if (!(step > 0)) throw InvalidParameter("reward: step time must be positive");
  using std::abs;
  const Scalar j = jerk(x, a_prev, step);
  return -(Scalar(k.a_c) * abs(x[state::kPositionError]) / Scalar(k.max_ep) +
           Scalar(k.b_c) * abs(x[state::kVelocityError]) / Scalar(k.max_ev) +
           Scalar(k.c_c) * abs(u) / Scalar(k.max_u) +
           Scalar(k.d_c) * abs(j) / (Scalar(2) * Scalar(k.max_a)));
}

// Absolute longitudinal kinematics, used as an independent model of the same platoon.
template <typename Scalar>
struct AbsoluteStateT {
  Scalar p{};  // front bumper position [m]
  Scalar v{};  // [m/s]
  Scalar a{};  // [m/s^2]
};
using AbsoluteState = AbsoluteStateT<double>;

template <typename Scalar>
struct GapErrors {
  Scalar e_p;
  Scalar e_v;
};

template <typename Scalar>
GapErrors<Scalar> absolute_to_error(const AbsoluteStateT<Scalar>& ego, const AbsoluteStateT<Scalar>& pred,
                                    const VehicleParams& ego_params, const VehicleParams& pred_params) {
  const Scalar gap = pred.p - ego.p - Scalar(pred_params.length);
  const Scalar desired = Scalar(ego_params.r) + Scalar(ego_params.h) * ego.v;
  return {gap - desired, pred.v - ego.v};
}

template <typename Scalar>
AbsoluteStateT<Scalar> step_absolute(const AbsoluteStateT<Scalar>& s, Scalar u, const VehicleParams& params,
                                     Scalar step) {
  if (!(step > 0)) throw InvalidParameter("step_absolute: step time must be positive");
  const Scalar tau = Scalar(params.tau);
  return {s.p + step * s.v, s.v + step * s.a, s.a + step * (-s.a / tau + u / tau)};
}

struct LeaderInputModel {
  double mean = 0.0;
  double std = 0.1;
  double clip = 2.5;

  void validate() const {
    if (!(std >= 0.0)) throw InvalidParameter("leader input std must be non-negative");
    if (!(clip > 0.0)) throw InvalidParameter("leader input clip must be positive");
  }
};

// One Gaussian draw, clipped to [-clip, clip]. Always consumes one normal variate.
template <typename Rng>
double leader_input(const LeaderInputModel& model, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double z = normal(rng);
  const double u = model.mean + model.std * z;
  return std::clamp(u, -model.clip, model.clip);
}

}  // namespace fedplatoon
