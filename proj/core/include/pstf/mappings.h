// pstf is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include "pstf/vecmath.h"

namespace pstf {

// Equal-area octahedral mapping between the unit sphere and [0,1]^2.
// Uniform density on the square corresponds to uniform density on the
// sphere, with a constant Jacobian: d(solid angle) = 4*pi * d(square area).
// (0.5, 0.5) maps to +Z; the outer corners map to -Z.

inline Vec3 squareToSphere(const Vec2 &p) {
    double u = 2.0 * p.x - 1.0;
    double v = 2.0 * p.y - 1.0;
    double up = std::abs(u);
    double vp = std::abs(v);

    double signedDist = 1.0 - (up + vp);
    double d = std::abs(signedDist);
    double r = 1.0 - d;

    double phi = (r == 0.0 ? 1.0 : (vp - up) / r + 1.0) * kPi / 4.0;
    double z = std::copysign(1.0 - sqr(r), signedDist);
    double cosPhi = std::copysign(std::cos(phi), u);
    double sinPhi = std::copysign(std::sin(phi), v);
    double s = r * safeSqrt(2.0 - sqr(r));
    return {cosPhi * s, sinPhi * s, z};
}

inline Vec2 sphereToSquare(const Vec3 &dir) {
    double x = std::abs(dir.x);
    double y = std::abs(dir.y);
    double z = std::abs(dir.z);

    double r = safeSqrt(1.0 - z);
    double phi = (x == 0.0 && y == 0.0) ? 0.0 : std::atan2(y, x) * (2.0 / kPi); // in [0,1]

    double v = phi * r;
    double u = r - v;
    if (dir.z < 0.0) {
        std::swap(u, v);
        u = 1.0 - u;
        v = 1.0 - v;
    }
    u = std::copysign(u, dir.x);
    v = std::copysign(v, dir.y);
    return {0.5 * (u + 1.0), 0.5 * (v + 1.0)};
}

/// pdf conversion: density on [0,1]^2 -> density per steradian.
inline double squarePdfToSolidAngle(double pdfSquare) { return pdfSquare * kInvFourPi; }

// Equal-area mapping between the upper (z >= 0) hemisphere and [0,1]^2:
// Shirley-Chiu concentric square-to-disk followed by the Lambert azimuthal
// lift. d(solid angle) = 2*pi * d(square area).

inline Vec2 squareToConcentricDisk(const Vec2 &p) {
    double a = 2.0 * p.x - 1.0;
    double b = 2.0 * p.y - 1.0;
    if (a == 0.0 && b == 0.0)
        return {0.0, 0.0};
    double r, phi;
    if (std::abs(a) > std::abs(b)) {
        r = a;
        phi = (kPi / 4.0) * (b / a);
    } else {
        r = b;
        phi = kPi / 2.0 - (kPi / 4.0) * (a / b);
    }
    return {r * std::cos(phi), r * std::sin(phi)};
}

inline Vec2 concentricDiskToSquare(const Vec2 &d) {
    double r = std::sqrt(d.x * d.x + d.y * d.y);
    double phi = std::atan2(d.y, d.x);
    if (phi < -kPi / 4.0)
        phi += kTwoPi;
    double a, b;
    if (phi < kPi / 4.0) {
        a = r;
        b = phi * (4.0 / kPi) * r;
    } else if (phi < 3.0 * kPi / 4.0) {
        b = r;
        a = -(phi - kPi / 2.0) * (4.0 / kPi) * r;
    } else if (phi < 5.0 * kPi / 4.0) {
        a = -r;
        b = -(phi - kPi) * (4.0 / kPi) * r;
    } else {
        b = -r;
        a = (phi - 3.0 * kPi / 2.0) * (4.0 / kPi) * r;
    }
    return {0.5 * (a + 1.0), 0.5 * (b + 1.0)};
}

inline Vec3 squareToHemisphere(const Vec2 &p) {
    Vec2 d = squareToConcentricDisk(p);
    double rSq = d.x * d.x + d.y * d.y;
    double scale = safeSqrt(2.0 - rSq);
    return {d.x * scale, d.y * scale, 1.0 - rSq};
}

inline Vec2 hemisphereToSquare(const Vec3 &dir) {
    double r = safeSqrt(1.0 - dir.z);
    double len = std::sqrt(dir.x * dir.x + dir.y * dir.y);
    Vec2 d = len > 0.0 ? Vec2(dir.x / len * r, dir.y / len * r) : Vec2(0.0, 0.0);
    return concentricDiskToSquare(d);
}

/// pdf conversion for the hemisphere map: square density -> per steradian.
inline double hemiSquarePdfToSolidAngle(double pdfSquare) { return pdfSquare / kTwoPi; }

struct Frame {
    Vec3 t, b, n;

    Vec3 toWorld(const Vec3 &local) const { return t * local.x + b * local.y + n * local.z; }
    Vec3 toLocal(const Vec3 &world) const {
        return {dot(world, t), dot(world, b), dot(world, n)};
    }
};

/// Branchless orthonormal basis (Duff et al. 2017); right-handed, t x b = n.
inline Frame buildFrame(const Vec3 &n) {
    double sign = std::copysign(1.0, n.z);
    double a = -1.0 / (sign + n.z);
    double b = n.x * n.y * a;
    Frame f;
    f.t = {1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x};
    f.b = {b, sign + n.y * n.y * a, -n.y};
    f.n = n;
    return f;
}

// Local-frame samplers (z-up). Pdfs are per steradian.

inline Vec3 sampleCosineHemisphere(const Vec2 &u) {
    double r = std::sqrt(u.x);
    double phi = kTwoPi * u.y;
    double x = r * std::cos(phi);
    double y = r * std::sin(phi);
    return {x, y, safeSqrt(1.0 - u.x)};
}

inline double cosineHemispherePdf(double cosTheta) {
    return cosTheta > 0.0 ? cosTheta * kInvPi : 0.0;
}

/// Phong-lobe direction about +Z with pdf (n+1)/(2*pi) * cos^n(theta).
inline Vec3 samplePowerCosine(double exponent, const Vec2 &u) {
    double cosTheta = std::pow(u.x, 1.0 / (exponent + 1.0));
    double sinTheta = safeSqrt(1.0 - sqr(cosTheta));
    double phi = kTwoPi * u.y;
    return {sinTheta * std::cos(phi), sinTheta * std::sin(phi), cosTheta};
}

inline double powerCosinePdf(double exponent, double cosTheta) {
    return cosTheta > 0.0 ? (exponent + 1.0) * kInvPi * 0.5 * std::pow(cosTheta, exponent) : 0.0;
}

inline Vec3 sampleUniformSphere(const Vec2 &u) {
    double z = 1.0 - 2.0 * u.x;
    double r = safeSqrt(1.0 - sqr(z));
    double phi = kTwoPi * u.y;
    return {r * std::cos(phi), r * std::sin(phi), z};
}

inline constexpr double uniformSpherePdf() { return kInvFourPi; }

} // namespace pstf
