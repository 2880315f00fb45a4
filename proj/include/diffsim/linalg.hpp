#pragma once

#include <array>
#include <cstddef>

#include "diffsim/tape.hpp"

namespace diffsim {

template <class T>
struct Vec3 {
  T x{}, y{}, z{};

  T& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  const T& operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3 operator*(const T& s) const { return {x * s, y * s, z * s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }
};

template <class T>
Vec3<T> operator*(const T& s, const Vec3<T>& v) {
  return v * s;
}

template <class T>
T dot(const Vec3<T>& a, const Vec3<T>& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}

template <class T>
Vec3<T> cross(const Vec3<T>& a, const Vec3<T>& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z,
          a.x * b.y - a.y * b.x};
}

template <class T>
T norm(const Vec3<T>& a) {
  return sqrt(dot(a, a));
}

// Row-major 3x3.
template <class T>
struct Mat3 {
  std::array<T, 9> m{};

  T& operator()(int r, int c) { return m[3 * r + c]; }
  const T& operator()(int r, int c) const { return m[3 * r + c]; }

  static Mat3 identity() {
    Mat3 out;
    out.m = {T(1), T(0), T(0), T(0), T(1), T(0), T(0), T(0), T(1)};
    return out;
  }

  static Mat3 diag(const T& a, const T& b, const T& c) {
    Mat3 out;
    out(0, 0) = a;
    out(1, 1) = b;
    out(2, 2) = c;
    return out;
  }

  Mat3 operator+(const Mat3& o) const {
    Mat3 out;
    for (int i = 0; i < 9; ++i) out.m[i] = m[i] + o.m[i];
    return out;
  }
  Mat3 operator-(const Mat3& o) const {
    Mat3 out;
    for (int i = 0; i < 9; ++i) out.m[i] = m[i] - o.m[i];
    return out;
  }
  Mat3 operator*(const T& s) const {
    Mat3 out;
    for (int i = 0; i < 9; ++i) out.m[i] = m[i] * s;
    return out;
  }
  Mat3& operator+=(const Mat3& o) {
    for (int i = 0; i < 9; ++i) m[i] += o.m[i];
    return *this;
  }

  Mat3 operator*(const Mat3& o) const {
    Mat3 out;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        out(r, c) = (*this)(r, 0) * o(0, c) + (*this)(r, 1) * o(1, c) +
                    (*this)(r, 2) * o(2, c);
    return out;
  }

  Vec3<T> operator*(const Vec3<T>& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }

  Mat3 transposed() const {
    Mat3 out;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out(r, c) = (*this)(c, r);
    return out;
  }

  T trace() const { return m[0] + m[4] + m[8]; }
};

template <class T>
T det(const Mat3<T>& a) {
  return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
         a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
         a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
}

// Cofactor matrix, i.e. det(A) * A^{-T} without the division.
template <class T>
Mat3<T> cofactor(const Mat3<T>& a) {
  Mat3<T> out;
  out(0, 0) = a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1);
  out(0, 1) = a(1, 2) * a(2, 0) - a(1, 0) * a(2, 2);
  out(0, 2) = a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0);
  out(1, 0) = a(0, 2) * a(2, 1) - a(0, 1) * a(2, 2);
  out(1, 1) = a(0, 0) * a(2, 2) - a(0, 2) * a(2, 0);
  out(1, 2) = a(0, 1) * a(2, 0) - a(0, 0) * a(2, 1);
  out(2, 0) = a(0, 1) * a(1, 2) - a(0, 2) * a(1, 1);
  out(2, 1) = a(0, 2) * a(1, 0) - a(0, 0) * a(1, 2);
  out(2, 2) = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
  return out;
}

template <class T>
Mat3<T> inverse(const Mat3<T>& a) {
  const T d = det(a);
  const Mat3<T> cof = cofactor(a);
  Mat3<T> out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out(r, c) = cof(c, r) / d;
  return out;
}

template <class T>
Mat3<T> outer(const Vec3<T>& a, const Vec3<T>& b) {
  Mat3<T> out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out(r, c) = a[r] * b[c];
  return out;
}

// F = U diag(S) V^T. The Value overload records a single tape primitive with
// a custom adjoint; the double overload is the plain numeric kernel.
inline void svd3(const Mat3<double>& f, Mat3<double>& u, Vec3<double>& s,
                 Mat3<double>& vt) {
  double sv[3];
  detail::svd3x3_values(f.m.data(), u.m.data(), sv, vt.m.data());
  s = {sv[0], sv[1], sv[2]};
}

inline void svd3(const Mat3<Value>& f, Mat3<Value>& u, Vec3<Value>& s,
                 Mat3<Value>& vt) {
  Tape* tape = nullptr;
  for (const Value& e : f.m)
    if (e.tape) {
      tape = e.tape;
      break;
    }
  if (!tape) {
    Mat3<double> fd, ud, vtd;
    Vec3<double> sd;
    for (int i = 0; i < 9; ++i) fd.m[i] = f.m[i].v;
    svd3(fd, ud, sd, vtd);
    for (int i = 0; i < 9; ++i) u.m[i] = Value(ud.m[i]);
    for (int i = 0; i < 9; ++i) vt.m[i] = Value(vtd.m[i]);
    s = {Value(sd.x), Value(sd.y), Value(sd.z)};
    return;
  }
  Value sv[3];
  tape->svd3x3(f.m.data(), u.m.data(), sv, vt.m.data());
  s = {sv[0], sv[1], sv[2]};
}

}  // namespace diffsim
