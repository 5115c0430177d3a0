#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "diffpbd/chain.hpp"
#include "diffpbd/math.hpp"

namespace oracles {

inline double rel_err(double a, double b, double floor = 1e-12) {
  double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

/// Central finite difference of a scalar function of n variables.
inline std::vector<double> central_fd(const std::function<double(const std::vector<double>&)>& f,
                                      std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double x0 = x[i];
    x[i] = x0 + h;
    double fp = f(x);
    x[i] = x0 - h;
    double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Deterministic uniform sampler for property tests.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}
  double uniform(double lo, double hi) {
    double u = double(eng_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }
  diffpbd::Vec3 unit_vec() {
    while (true) {
      diffpbd::Vec3 v{uniform(-1, 1), uniform(-1, 1), uniform(-1, 1)};
      double n2 = diffpbd::norm_squared(v);
      if (n2 > 0.01 && n2 < 1.0) return v / std::sqrt(n2);
    }
  }
  diffpbd::Quat unit_quat() {
    diffpbd::Quat q{uniform(-1, 1), uniform(-1, 1), uniform(-1, 1), uniform(-1, 1)};
    double n = diffpbd::quat_norm(q);
    if (n < 0.1) return unit_quat();
    return {q.w / n, q.x / n, q.y / n, q.z / n};
  }

 private:
  std::mt19937_64 eng_;
};

/// Forward kinematics oracle built on 4x4 homogeneous transforms, independent
/// of the quaternion-based chain code. Places each link of a chain that
/// follows the canonical zero-pose convention and returns COM positions and
/// orientations as rotation matrices.
struct HomogeneousFk {
  std::vector<diffpbd::Vec3> com;
  std::vector<diffpbd::Mat3> rot;
};

inline HomogeneousFk homogeneous_fk(const diffpbd::Chain<double>& chain,
                                    const std::vector<double>& angles) {
  using diffpbd::Mat3;
  using diffpbd::Vec3;
  struct T4 {
    Mat3 r = Mat3::identity();
    Vec3 t{};
    T4 operator*(const T4& o) const { return {r * o.r, r * o.t + t}; }
  };
  auto rot_axis = [](const Vec3& axis, double angle) {
    // Rodrigues formula.
    Mat3 k = diffpbd::skew(axis);
    Mat3 r = Mat3::identity() + k * std::sin(angle) + (k * k) * (1.0 - std::cos(angle));
    return r;
  };

  HomogeneousFk out;
  const auto& base = chain.links[0];
  T4 pose{diffpbd::quat_to_rot(base.orientation), base.position};
  out.com.push_back(pose.t);
  out.rot.push_back(pose.r);
  for (std::size_t k = 0; k < chain.joints.size(); ++k) {
    const auto& j = chain.joints[k];
    const auto& parent = chain.links[j.parent];
    const auto& child = chain.links[j.child];
    // COM -> outboard anchor, rotate about the joint axis, anchor -> child COM.
    T4 to_anchor{Mat3::identity(), parent.com_to_child_joint};
    T4 hinge{rot_axis(parent.child_joint_axes.col(j.axis_column), angles[k]), Vec3{}};
    T4 from_anchor{Mat3::identity(), -child.com_to_parent_joint};
    pose = pose * to_anchor * hinge * from_anchor;
    out.com.push_back(pose.t);
    out.rot.push_back(pose.r);
  }
  return out;
}

}  // namespace oracles
