// pstf is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <functional>

#include "pstf/image.h"
#include "pstf/rng.h"
#include "pstf/scene.h"

namespace pstf {

struct TraceConfig {
    int maxDepth = 64;
    bool enableNee = true;
    bool enableRr = true;
    int rrStartDepth = 3; // roulette begins after this many bounces
    double rrClampLo = 0.05;
};

/// Balance heuristic. Precondition: not both pdfs zero (returns NaN then).
inline double misBalance(double pdfA, double pdfB) {
    return pdfA / (pdfA + pdfB);
}

/// pdf of the continuation technique at an arbitrary direction, used for MIS
/// against light sampling. Solid-angle measure.
using ContinuationPdf = std::function<double(const Vec3 &wi)>;

struct NeeSample {
    bool sampled = false;  // a light-technique direction was drawn
    Vec3 dir;              // from the shading point toward the light
    double pdfSigma = 0.0; // solid-angle pdf of the light technique
    RGB radiance{0.0};     // arriving emission (zero when occluded)
    RGB f{0.0};
    double cosX = 0.0;
    double misWeight = 1.0;
    bool occluded = false;

    /// Fully weighted contribution to L_{o\e} at the vertex.
    RGB value() const {
        if (!sampled || pdfSigma <= 0.0 || cosX <= 0.0)
            return RGB(0.0);
        return f * radiance * (cosX * misWeight / pdfSigma);
    }
};

NeeSample sampleNee(const Scene &scene, const Vec3 &position, const Vec3 &normal, const Vec3 &wo,
                    int material, Rng &rng, const ContinuationPdf &contPdf);

/// Single-sample MIS-weighted direct lighting estimate at a vertex.
RGB nextEventEstimation(const Scene &scene, const Vec3 &position, const Vec3 &normal,
                        const Vec3 &wo, int material, Rng &rng);

/// Everything observed at one path vertex, delivered to hooks once the next
/// event (surface hit, environment escape or termination) is known. Hooks may
/// not mutate the path.
struct VertexRecord {
    int depth = 0; // 1 at the first surface vertex
    Vec3 position, normal, wo;
    int material = -1;
    double footprint = 0.0;
    RGB throughputPrefix{1.0};
    RGB emissionHere{0.0}; // raw L_e(x_j, wo_j)

    NeeSample nee;

    bool contSampled = false;
    Vec3 wi;
    RGB f{0.0};
    double pdfSigma = 0.0;
    double pdfProj = 0.0; // projected-solid-angle pdf, pdfSigma / cos
    double rrSurvival = 1.0;
    bool usedModel = false;

    bool contExtended = false; // next info below is valid
    bool nextIsSurface = false;
    Vec3 nextPosition, nextNormal;
    double nextFootprint = 0.0;
    RGB nextEmission{0.0};          // raw L_e at the next vertex (or environment)
    double nextEmisMisWeight = 1.0; // MIS weight applied to that emission pickup

    /// MIS-weight-free transport ratio for field updates:
    /// cos(wi,n) / (pdfSigma * rrSurvival).
    double transportRatio() const {
        double cosI = dot(wi, normal);
        return cosI > 0.0 && pdfSigma > 0.0 ? cosI / (pdfSigma * rrSurvival) : 0.0;
    }
};

class PathHooks {
public:
    virtual ~PathHooks() = default;
    virtual void onVertex(const VertexRecord &record) = 0;
};

/// Unbiased forward path tracer with NEE, balance-heuristic MIS and Russian
/// roulette; fires hooks at every vertex. Returns one radiance sample.
RGB tracePath(const Scene &scene, const TraceConfig &config, int px, int py, Rng &rng,
              PathHooks *hooks = nullptr);

/// Adds one wave of samples into the accumulation buffer. Deterministic for a
/// fixed (seed, frameIndex) regardless of thread count; hooks must be safe for
/// concurrent invocation. Throws on a buffer dimension mismatch.
void renderFrame(const Scene &scene, const TraceConfig &config, ImageBuffer &buffer,
                 uint64_t frameIndex, uint64_t seed, int sppPerFrame, int threads,
                 PathHooks *hooks = nullptr);

} // namespace pstf
