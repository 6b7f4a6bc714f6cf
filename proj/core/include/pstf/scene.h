// pstf is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pstf/mappings.h"
#include "pstf/vecmath.h"

namespace pstf {

/// Lambertian base with an optional normalized Phong lobe layered on top.
/// Lobe choice is albedo-proportional and folded into the sampling pdf.
struct Material {
    std::string name;
    RGB diffuseAlbedo{0.0};
    RGB glossyAlbedo{0.0};
    double glossyExponent = 1.0;
    RGB emission{0.0};
    bool twoSided = false; // emit from both faces (off by default)

    bool isEmissive() const { return !emission.isBlack(); }
};

struct Primitive {
    enum class Kind { Sphere, Quad, Triangle };

    Kind kind = Kind::Sphere;
    Vec3 center;          // sphere
    double radius = 0.0;  // sphere
    Vec3 p0, e1, e2;      // quad: corner + edges; triangle: v0 + (v1-v0) + (v2-v0)
    int material = -1;

    double area() const;
    Aabb bounds() const;
    /// Front-facing geometric normal at a surface point.
    Vec3 frontNormal(const Vec3 &p) const;
};

struct Camera {
    Vec3 origin{0, 0, 0};
    Vec3 lookAt{0, 0, -1};
    Vec3 up{0, 1, 0};
    double verticalFov = 45.0; // degrees
    int width = 64, height = 64;
};

struct Hit {
    Vec3 position;
    Vec3 normal;   // faces the incoming ray side
    int material = -1;
    int primitive = -1;
    double distance = 0.0;
    bool backface = false; // geometric normal was flipped to face the ray
};

struct LightSample {
    bool isEnvironment = false;
    // area-light case
    Vec3 point;
    Vec3 normal;
    RGB emission;
    double pdfArea = 0.0;
    int primitive = -1;
    // environment case
    Vec3 direction;
    double pdfSolidAngle = 0.0;
};

class SceneError : public std::runtime_error {
public:
    SceneError(const std::string &message, int line = 0)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + message
                                      : message),
          line(line) {}
    int line;
};

class Scene {
public:
    std::vector<Material> materials;
    std::vector<Primitive> primitives;
    Camera camera;
    bool hasEnvironment = false;
    RGB environment{0.0};
    bool allowNoEmitters = false;

    /// Validates invariants and builds emitter tables and bounds. Throws SceneError.
    void finalize();

    std::optional<Hit> intersect(const Vec3 &origin, const Vec3 &dir, double tMin,
                                 double tMax = kInfDistance) const;
    bool occluded(const Vec3 &a, const Vec3 &b) const;

    /// Radiance emitted from a hit point toward -rayDir (zero from the back of
    /// one-sided emitters).
    RGB emissionToward(const Hit &hit, const Vec3 &rayDir) const;

    /// Power-proportional emitter selection, uniform-area sampling on the
    /// chosen emitter. Returns nothing if the scene has no emitters.
    std::optional<LightSample> sampleLight(const Vec3 &from, double uSelect, const Vec2 &u) const;

    /// Solid-angle pdf of sampleLight producing the direction that leads to
    /// `hit` from `from`; used for MIS against BSDF sampling.
    double lightPdfSolidAngle(const Vec3 &from, const Vec3 &dir, const Hit &hit) const;
    /// Solid-angle pdf of sampleLight picking an environment direction.
    double environmentPdfSolidAngle() const;

    bool hasEmitters() const { return !m_emitters.empty() || environmentEmissive(); }
    bool environmentEmissive() const { return hasEnvironment && !environment.isBlack(); }
    const std::vector<int> &emitters() const { return m_emitters; }
    double emitterSelectProb(int primitive) const;

    const Aabb &bounds() const { return m_bounds; }
    double diameter() const { return m_diameter; }

    static constexpr double kInfDistance = 1e30;

private:
    std::vector<int> m_emitters;
    std::vector<double> m_emitterCdf; // over m_emitters, environment appended last if emissive
    double m_environmentSelectProb = 0.0;
    Aabb m_bounds;
    double m_diameter = 1.0;
};

Scene parseScene(const std::string &text);
Scene loadScene(const std::string &path);
std::string serializeScene(const Scene &scene);

bool operator==(const Scene &a, const Scene &b);

// BSDF interface. `wi`/`wo` point away from the surface; values exclude the
// cosine term, pdfs are per steradian and match sampleBsdf's true density.

RGB evalBsdf(const Material &mat, const Vec3 &wi, const Vec3 &wo, const Vec3 &n);
double pdfBsdf(const Material &mat, const Vec3 &wi, const Vec3 &wo, const Vec3 &n);

struct BsdfSample {
    Vec3 wi;
    RGB f;
    double pdf = 0.0;
    bool valid = false; // false: absorb (black material or zero pdf)
};

BsdfSample sampleBsdf(const Material &mat, const Vec3 &wo, const Vec3 &n, double uLobe,
                      const Vec2 &u);

struct CameraRay {
    Vec3 origin;
    Vec3 dir;
};

CameraRay generateCameraRay(const Camera &camera, int px, int py, const Vec2 &jitter);
/// Approximate angular extent of one pixel, used to seed path footprints.
double pixelAngle(const Camera &camera);

} // namespace pstf
