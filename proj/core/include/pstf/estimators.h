// pstf is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <memory>
#include <unordered_map>

#include "pstf/field.h"
#include "pstf/image.h"
#include "pstf/models.h"
#include "pstf/pathtracer.h"
#include "pstf/scene.h"

namespace pstf {

enum class EstimatorKind { PT, PT_NEE, IS, CV, IS_CV, B };

const char *estimatorName(EstimatorKind kind);
bool parseEstimatorKind(const std::string &name, EstimatorKind &out);
bool parseModelKind(const std::string &name, ModelKind &out);

struct EstimatorConfig {
    EstimatorKind kind = EstimatorKind::PT_NEE;
    double beta = 0.75;        // control-variate strength
    double gamma = 0.0;        // predictor-corrector residual scale
    double alphaMix0 = 0.5;    // BSDF fraction of the guiding mixture
    int cvMaxDepth = 2;        // CV applied at vertices with depth <= this
    int biasedVertex = 2;      // vertex index for the biased estimator
    int warmupFrames = 32;     // field-building frames before measurement
    ModelKind modelKind = ModelKind::Grid;
    double tMax = 64.0;        // temporal window for fields and models

    TraceConfig trace;
    uint64_t seed = 0;
    int sppPerFrame = 1;
    int threads = 0;           // 0: hardware concurrency
    bool deterministic = false;

    // field infrastructure
    uint32_t hashCapacityLog2 = 18;
    double baseCellFraction = 1.0 / 256.0; // of scene diameter
    int maxLevel = 4;
    double levelSelectK = 4.0;
    uint32_t loeTechniqueMask = TechContinuation | TechNee;
    uint32_t fliTechniqueMask = TechContinuation | TechNee;
    bool trackLi = false;

    // directional models
    ModelConfig model;
    int minModelSamples = 32; // records before a model may guide

    // control-variate directional profile: a per-cell grid over the local
    // equal-area hemisphere square. Any normalized profile integrates to one
    // over the hemisphere, so the known-integral identity holds exactly.
    int profileResolution = 16;
    int profileMinSamples = 32;

    bool usesGuiding() const {
        return kind == EstimatorKind::IS || kind == EstimatorKind::IS_CV;
    }
    bool usesCv() const { return kind == EstimatorKind::CV || kind == EstimatorKind::IS_CV; }
    bool usesFields() const { return kind != EstimatorKind::PT && kind != EstimatorKind::PT_NEE; }
};

// ---------------------------------------------------------------------------
// Pure per-vertex estimator kernels. `g` is the sampled integrand value,
// `pdf` the technique pdf, `misW` its MIS weight, `h` the control variate at
// the sampled direction and `iH` its known integral. The known-integral term
// sits outside the 1/pdf factor.

inline RGB cvEstimate(const RGB &g, double pdf, double misW, const RGB &h, const RGB &iH,
                      double beta) {
    return (g - h * beta) * (misW / pdf) + iH * beta;
}

inline RGB combinedCvEstimate(const RGB &g, double p0, double p1, double pdfMix, double misW,
                              double beta) {
    return (g - RGB(1.0) * (beta * (p1 - p0))) * (misW / pdfMix);
}

/// gamma = 1 reproduces cvEstimate(beta = 1) bitwise; gamma = 0 returns the
/// cache value iH alone.
inline RGB biasedEstimate(const RGB &g, double pdf, double misW, const RGB &h, const RGB &iH,
                          double gamma) {
    return (g - h) * (misW / pdf) * gamma + iH;
}

// ---------------------------------------------------------------------------
// Guided vertex sampling: one-sample MIS mixture of the BSDF and a learned
// directional model. With a null model (cold cell) or alpha0 >= 1 this is
// exactly sampleBsdf, including RNG consumption.

struct GuidedSample {
    Vec3 wi;
    RGB f{0.0};
    double pdfMix = 0.0;
    double pdfBsdf = 0.0;  // p0 at wi
    double pdfModel = 0.0; // p1 at wi
    bool usedModel = false;
    bool valid = false;
};

GuidedSample guidedSampleDirection(const Material &mat, const Vec3 &wo, const Vec3 &n,
                                   const DirectionalModel *model, double alpha0, Rng &rng);
double guidedPdf(const Material &mat, const Vec3 &wo, const Vec3 &n, const DirectionalModel *model,
                 double alpha0, const Vec3 &wi);

// ---------------------------------------------------------------------------
// Per-spatial-cell directional model storage, keyed like the outgoing-field
// cells. Lookups are concurrent during a frame; mutation happens in the
// exclusive frame-end phase.

struct ModelKeyHash {
    size_t operator()(const SpatioDirectionalKey &k) const {
        uint64_t h = mixBits(uint64_t(uint32_t(k.level)) ^ (uint64_t(uint32_t(k.cell[0])) << 20) ^
                             (uint64_t(uint32_t(k.cell[1])) << 40));
        h = mixBits(h ^ uint64_t(uint32_t(k.cell[2])) ^ (uint64_t(uint32_t(k.dirCell[0])) << 28) ^
                    (uint64_t(uint32_t(k.dirCell[1])) << 52));
        return size_t(h);
    }
};

class ModelStore {
public:
    ModelStore(const ModelConfig &config, double tMax, int minSamples)
        : m_config(config), m_tMax(tMax), m_minSamples(minSamples) {}

    /// Model ready for guided sampling, or nullptr while cold.
    const DirectionalModel *lookupWarm(const SpatioDirectionalKey &key) const;
    /// Exclusive-phase record application; creates the model on first touch.
    void applyRecord(const SpatioDirectionalKey &key, const Vec2 &uv, double contribution);
    void endFrame();
    size_t size() const { return m_map.size(); }

private:
    struct Entry {
        std::unique_ptr<DirectionalModel> model;
        double cOld = 0.0, cNew = 0.0;
        uint64_t records = 0;
        bool warm = false;
    };
    ModelConfig m_config;
    double m_tMax;
    int m_minSamples;
    std::unordered_map<SpatioDirectionalKey, Entry, ModelKeyHash> m_map;
};

// ---------------------------------------------------------------------------

struct FrameStat {
    uint64_t frame = 0;   // 1-based accumulation frame index
    double wallMs = 0.0;  // cumulative
    double rmse = -1.0;   // vs reference; -1 when no reference given
};

struct RunResult {
    Image image;
    std::vector<FrameStat> frameStats;
};

/// One full estimator instance over a scene: the field stores, the model
/// store and the per-frame render/update cycle.
class EstimatorRun {
public:
    EstimatorRun(const Scene &scene, const EstimatorConfig &config);
    ~EstimatorRun();

    /// Traces one wave (sppPerFrame paths/pixel), feeds the fields/models and
    /// commits the frame. Null buffer: field updates only (warm-up).
    void renderFrame(ImageBuffer *accumulate);

    uint64_t frameIndex() const { return m_frame; }
    const EstimatorConfig &config() const { return m_config; }

    FieldStore &loStore() { return *m_lo; }
    FieldStore &loeStore() { return *m_loe; }
    FieldStore &fliStore() { return *m_fli; }
    FieldStore *liStore() { return m_li.get(); }
    ModelStore &models() { return *m_models; }
    ModelStore &profiles() { return *m_profiles; }
    uint64_t cvFallbacks() const { return m_cvFallbacks; }

    struct WorkerSink;

private:
    RGB tracePixelEstimator(int px, int py, Rng &rng, WorkerSink &sink);

    const Scene &m_scene;
    EstimatorConfig m_config;
    uint64_t m_frame = 0;
    std::unique_ptr<FieldStore> m_lo, m_loe, m_fli, m_li;
    std::unique_ptr<ModelStore> m_models;   // guided-sampling distributions
    std::unique_ptr<ModelStore> m_profiles; // control-variate hemisphere profiles
    std::atomic<uint64_t> m_cvFallbacks{0};
};

/// Warm-up then `frames` accumulation frames; per-frame RMSE stream when a
/// reference image is supplied.
RunResult runEstimator(const Scene &scene, const EstimatorConfig &config, int frames,
                       const Image *reference = nullptr);

} // namespace pstf
