#pragma once

#include <array>
#include <cmath>
#include <type_traits>

namespace diffpbd {

/// 3-vector over a generic scalar. All physics kernels are written against
/// this type so the same code runs on plain doubles and on tape variables.
template <class T>
struct Vec3T {
  T x{}, y{}, z{};

  Vec3T() = default;
  Vec3T(T xx, T yy, T zz) : x(std::move(xx)), y(std::move(yy)), z(std::move(zz)) {}

  static Vec3T zero() { return Vec3T(); }

  Vec3T operator+(const Vec3T& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3T operator-(const Vec3T& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3T operator-() const { return {-x, -y, -z}; }
  Vec3T operator*(const T& s) const { return {x * s, y * s, z * s}; }
  Vec3T operator/(const T& s) const { return {x / s, y / s, z / s}; }

  Vec3T& operator+=(const Vec3T& o) { x = x + o.x; y = y + o.y; z = z + o.z; return *this; }
  Vec3T& operator-=(const Vec3T& o) { x = x - o.x; y = y - o.y; z = z - o.z; return *this; }
};

template <class T>
Vec3T<T> operator*(const T& s, const Vec3T<T>& v) { return v * s; }

template <class T>
  requires(!std::is_same_v<T, double>)
Vec3T<T> operator*(double s, const Vec3T<T>& v) { return v * T(s); }

template <class T>
  requires(!std::is_same_v<T, double>)
Vec3T<T> operator*(const Vec3T<T>& v, double s) { return v * T(s); }

template <class T>
T dot(const Vec3T<T>& a, const Vec3T<T>& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

template <class T>
Vec3T<T> cross(const Vec3T<T>& a, const Vec3T<T>& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

template <class T>
T norm_squared(const Vec3T<T>& v) { return dot(v, v); }

template <class T>
T norm(const Vec3T<T>& v) {
  using std::sqrt;
  return sqrt(norm_squared(v));
}

template <class T>
Vec3T<T> normalized(const Vec3T<T>& v) { return v / norm(v); }

/// Row-major 3x3 matrix over a generic scalar.
template <class T>
struct Mat3T {
  std::array<T, 9> m{};

  static Mat3T identity() {
    Mat3T r;
    r.m[0] = T(1); r.m[4] = T(1); r.m[8] = T(1);
    return r;
  }
  static Mat3T zero() { return Mat3T(); }
  static Mat3T diagonal(const T& a, const T& b, const T& c) {
    Mat3T r;
    r.m[0] = a; r.m[4] = b; r.m[8] = c;
    return r;
  }

  T& operator()(int r, int c) { return m[r * 3 + c]; }
  const T& operator()(int r, int c) const { return m[r * 3 + c]; }

  Vec3T<T> col(int c) const { return {m[c], m[3 + c], m[6 + c]}; }
  Vec3T<T> row(int r) const { return {m[r * 3], m[r * 3 + 1], m[r * 3 + 2]}; }
  void set_col(int c, const Vec3T<T>& v) { m[c] = v.x; m[3 + c] = v.y; m[6 + c] = v.z; }

  Vec3T<T> operator*(const Vec3T<T>& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }

  Mat3T operator*(const Mat3T& o) const {
    Mat3T r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        r(i, j) = (*this)(i, 0) * o(0, j) + (*this)(i, 1) * o(1, j) + (*this)(i, 2) * o(2, j);
    return r;
  }

  Mat3T operator+(const Mat3T& o) const {
    Mat3T r;
    for (int i = 0; i < 9; ++i) r.m[i] = m[i] + o.m[i];
    return r;
  }

  Mat3T operator*(const T& s) const {
    Mat3T r;
    for (int i = 0; i < 9; ++i) r.m[i] = m[i] * s;
    return r;
  }

  Mat3T transposed() const {
    Mat3T r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
  }
};

/// Skew-symmetric matrix such that skew(a) * b == cross(a, b).
template <class T>
Mat3T<T> skew(const Vec3T<T>& v) {
  Mat3T<T> r;
  r(0, 1) = -v.z; r(0, 2) = v.y;
  r(1, 0) = v.z;  r(1, 2) = -v.x;
  r(2, 0) = -v.y; r(2, 1) = v.x;
  return r;
}

template <class T>
T determinant(const Mat3T<T>& a) {
  return a.m[0] * (a.m[4] * a.m[8] - a.m[5] * a.m[7])
       - a.m[1] * (a.m[3] * a.m[8] - a.m[5] * a.m[6])
       + a.m[2] * (a.m[3] * a.m[7] - a.m[4] * a.m[6]);
}

/// Closed-form adjugate inverse. Caller guarantees invertibility (used for
/// inertia tensors, which are SPD for dynamic links).
template <class T>
Mat3T<T> inverse(const Mat3T<T>& a) {
  T det = determinant(a);
  T inv_det = T(1) / det;
  Mat3T<T> r;
  r.m[0] = (a.m[4] * a.m[8] - a.m[5] * a.m[7]) * inv_det;
  r.m[1] = (a.m[2] * a.m[7] - a.m[1] * a.m[8]) * inv_det;
  r.m[2] = (a.m[1] * a.m[5] - a.m[2] * a.m[4]) * inv_det;
  r.m[3] = (a.m[5] * a.m[6] - a.m[3] * a.m[8]) * inv_det;
  r.m[4] = (a.m[0] * a.m[8] - a.m[2] * a.m[6]) * inv_det;
  r.m[5] = (a.m[2] * a.m[3] - a.m[0] * a.m[5]) * inv_det;
  r.m[6] = (a.m[3] * a.m[7] - a.m[4] * a.m[6]) * inv_det;
  r.m[7] = (a.m[1] * a.m[6] - a.m[0] * a.m[7]) * inv_det;
  r.m[8] = (a.m[0] * a.m[4] - a.m[1] * a.m[3]) * inv_det;
  return r;
}

/// Hamilton quaternion, scalar-first storage (w, x, y, z).
template <class T>
struct QuatT {
  T w{1}, x{}, y{}, z{};

  QuatT() = default;
  QuatT(T ww, T xx, T yy, T zz)
      : w(std::move(ww)), x(std::move(xx)), y(std::move(yy)), z(std::move(zz)) {}

  static QuatT identity() { return QuatT(); }
};

template <class T>
QuatT<T> quat_mul(const QuatT<T>& a, const QuatT<T>& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

template <class T>
QuatT<T> conjugate(const QuatT<T>& q) { return {q.w, -q.x, -q.y, -q.z}; }

template <class T>
T quat_norm(const QuatT<T>& q) {
  using std::sqrt;
  return sqrt(q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z);
}

template <class T>
QuatT<T> normalize(const QuatT<T>& q) {
  T inv = T(1) / quat_norm(q);
  return {q.w * inv, q.x * inv, q.y * inv, q.z * inv};
}

template <class T>
Vec3T<T> vec_part(const QuatT<T>& q) { return {q.x, q.y, q.z}; }

/// Rotation matrix of a unit quaternion.
template <class T>
Mat3T<T> quat_to_rot(const QuatT<T>& q) {
  T xx = q.x * q.x, yy = q.y * q.y, zz = q.z * q.z;
  T xy = q.x * q.y, xz = q.x * q.z, yz = q.y * q.z;
  T wx = q.w * q.x, wy = q.w * q.y, wz = q.w * q.z;
  Mat3T<T> r;
  r.m[0] = T(1) - 2.0 * (yy + zz);
  r.m[1] = 2.0 * (xy - wz);
  r.m[2] = 2.0 * (xz + wy);
  r.m[3] = 2.0 * (xy + wz);
  r.m[4] = T(1) - 2.0 * (xx + zz);
  r.m[5] = 2.0 * (yz - wx);
  r.m[6] = 2.0 * (xz - wy);
  r.m[7] = 2.0 * (yz + wx);
  r.m[8] = T(1) - 2.0 * (xx + yy);
  return r;
}

template <class T>
Vec3T<T> rotate_vec(const QuatT<T>& q, const Vec3T<T>& v) {
  Vec3T<T> u{q.x, q.y, q.z};
  Vec3T<T> t = 2.0 * cross(u, v);
  return v + q.w * t + cross(u, t);
}

/// First-order quaternion update by a small rotation vector, renormalized.
/// q' = normalize(q + 0.5 * [0, dphi] * q)
template <class T>
QuatT<T> apply_rotvec(const QuatT<T>& q, const Vec3T<T>& dphi) {
  QuatT<T> dq = quat_mul(QuatT<T>{T(0), dphi.x, dphi.y, dphi.z}, q);
  QuatT<T> out{q.w + 0.5 * dq.w, q.x + 0.5 * dq.x, q.y + 0.5 * dq.y, q.z + 0.5 * dq.z};
  return normalize(out);
}

/// Exact axis-angle quaternion; axis must be unit length.
template <class T>
QuatT<T> quat_from_axis_angle(const Vec3T<T>& axis, const T& angle) {
  using std::cos;
  using std::sin;
  T half = 0.5 * angle;
  T s = sin(half);
  return {cos(half), axis.x * s, axis.y * s, axis.z * s};
}

using Vec3 = Vec3T<double>;
using Mat3 = Mat3T<double>;
using Quat = QuatT<double>;

}  // namespace diffpbd
