// pstf is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <ostream>

namespace pstf {

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;
constexpr double kFourPi = 4.0 * kPi;
constexpr double kInvPi = 1.0 / kPi;
constexpr double kInvFourPi = 1.0 / kFourPi;

inline double clamp(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }
inline double sqr(double x) { return x * x; }
inline double safeSqrt(double x) { return std::sqrt(std::max(0.0, x)); }
inline double lerp(double a, double b, double t) { return a + (b - a) * t; }

struct Vec2 {
    double x = 0.0, y = 0.0;

    Vec2() = default;
    Vec2(double x, double y) : x(x), y(y) {}

    Vec2 operator+(const Vec2 &o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2 &o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    bool operator==(const Vec2 &o) const { return x == o.x && y == o.y; }
};

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3() = default;
    Vec3(double x, double y, double z) : x(x), y(y), z(z) {}

    Vec3 operator+(const Vec3 &o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3 &o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3 &operator+=(const Vec3 &o) { x += o.x; y += o.y; z += o.z; return *this; }
    Vec3 &operator*=(double s) { x *= s; y *= s; z *= s; return *this; }
    bool operator==(const Vec3 &o) const { return x == o.x && y == o.y && z == o.z; }
};

inline Vec3 operator*(double s, const Vec3 &v) { return v * s; }
inline double dot(const Vec3 &a, const Vec3 &b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3 &a, const Vec3 &b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double lengthSq(const Vec3 &v) { return dot(v, v); }
inline double length(const Vec3 &v) { return std::sqrt(lengthSq(v)); }
inline Vec3 normalize(const Vec3 &v) { return v / length(v); }
inline Vec3 reflect(const Vec3 &w, const Vec3 &n) { return n * (2.0 * dot(w, n)) - w; }
inline Vec3 min(const Vec3 &a, const Vec3 &b) {
    return {std::min(a.x, b.x), std::min(a.y, b.y), std::min(a.z, b.z)};
}
inline Vec3 max(const Vec3 &a, const Vec3 &b) {
    return {std::max(a.x, b.x), std::max(a.y, b.y), std::max(a.z, b.z)};
}

inline std::ostream &operator<<(std::ostream &os, const Vec3 &v) {
    return os << "(" << v.x << ", " << v.y << ", " << v.z << ")";
}

/// Linear RGB triple. All radiometric quantities in the library are linear RGB.
struct RGB {
    double r = 0.0, g = 0.0, b = 0.0;

    RGB() = default;
    explicit RGB(double v) : r(v), g(v), b(v) {}
    RGB(double r, double g, double b) : r(r), g(g), b(b) {}

    RGB operator+(const RGB &o) const { return {r + o.r, g + o.g, b + o.b}; }
    RGB operator-(const RGB &o) const { return {r - o.r, g - o.g, b - o.b}; }
    RGB operator*(const RGB &o) const { return {r * o.r, g * o.g, b * o.b}; }
    RGB operator*(double s) const { return {r * s, g * s, b * s}; }
    RGB operator/(double s) const { return {r / s, g / s, b / s}; }
    RGB &operator+=(const RGB &o) { r += o.r; g += o.g; b += o.b; return *this; }
    RGB &operator-=(const RGB &o) { r -= o.r; g -= o.g; b -= o.b; return *this; }
    RGB &operator*=(double s) { r *= s; g *= s; b *= s; return *this; }
    RGB &operator*=(const RGB &o) { r *= o.r; g *= o.g; b *= o.b; return *this; }
    bool operator==(const RGB &o) const { return r == o.r && g == o.g && b == o.b; }

    bool isBlack() const { return r == 0.0 && g == 0.0 && b == 0.0; }
    double maxComponent() const { return std::max(r, std::max(g, b)); }
};

inline RGB operator*(double s, const RGB &c) { return c * s; }
inline double luminance(const RGB &c) { return 0.2126 * c.r + 0.7152 * c.g + 0.0722 * c.b; }
inline bool isFinite(const RGB &c) {
    return std::isfinite(c.r) && std::isfinite(c.g) && std::isfinite(c.b);
}
inline std::ostream &operator<<(std::ostream &os, const RGB &c) {
    return os << "(" << c.r << ", " << c.g << ", " << c.b << ")";
}

struct Aabb {
    Vec3 lo{1e300, 1e300, 1e300};
    Vec3 hi{-1e300, -1e300, -1e300};

    void extend(const Vec3 &p) { lo = min(lo, p); hi = max(hi, p); }
    void extend(const Aabb &b) { lo = min(lo, b.lo); hi = max(hi, b.hi); }
    bool contains(const Vec3 &p) const {
        return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z && p.z <= hi.z;
    }
    Vec3 center() const { return (lo + hi) * 0.5; }
    double diameter() const { return length(hi - lo); }
};

} // namespace pstf
