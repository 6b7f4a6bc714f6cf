// pstf is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include "pstf/estimators.h"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <thread>
#include <tuple>

namespace pstf {

const char *estimatorName(EstimatorKind kind) {
    switch (kind) {
    case EstimatorKind::PT: return "pt";
    case EstimatorKind::PT_NEE: return "pt-nee";
    case EstimatorKind::IS: return "is";
    case EstimatorKind::CV: return "cv";
    case EstimatorKind::IS_CV: return "is-cv";
    case EstimatorKind::B: return "b";
    }
    return "?";
}

bool parseEstimatorKind(const std::string &name, EstimatorKind &out) {
    if (name == "pt") out = EstimatorKind::PT;
    else if (name == "pt-nee") out = EstimatorKind::PT_NEE;
    else if (name == "is") out = EstimatorKind::IS;
    else if (name == "cv") out = EstimatorKind::CV;
    else if (name == "is-cv") out = EstimatorKind::IS_CV;
    else if (name == "b") out = EstimatorKind::B;
    else return false;
    return true;
}

bool parseModelKind(const std::string &name, ModelKind &out) {
    if (name == "grid") out = ModelKind::Grid;
    else if (name == "kdtree") out = ModelKind::KdTree;
    else if (name == "gmm") out = ModelKind::Gmm;
    else return false;
    return true;
}

// ---------------------------------------------------------------------------
// Guided sampling

double guidedPdf(const Material &mat, const Vec3 &wo, const Vec3 &n, const DirectionalModel *model,
                 double alpha0, const Vec3 &wi) {
    double p0 = pdfBsdf(mat, wi, wo, n);
    if (!model || alpha0 >= 1.0)
        return p0;
    double p1 = model->pdf(sphereToSquare(wi)) * kInvFourPi;
    return alpha0 * p0 + (1.0 - alpha0) * p1;
}

GuidedSample guidedSampleDirection(const Material &mat, const Vec3 &wo, const Vec3 &n,
                                   const DirectionalModel *model, double alpha0, Rng &rng) {
    GuidedSample out;
    if (!model || alpha0 >= 1.0) {
        BsdfSample bs = sampleBsdf(mat, wo, n, rng.next1D(), rng.next2D());
        out.wi = bs.wi;
        out.f = bs.f;
        out.pdfBsdf = bs.pdf;
        out.pdfMix = bs.pdf;
        out.valid = bs.valid;
        return out;
    }
    for (int attempt = 0; attempt < 2; ++attempt) { // resample once on a zero mixture pdf
        bool useModel = rng.next1D() >= alpha0;
        Vec3 wi;
        double pdfModelAtSample = -1.0;
        if (useModel) {
            Sample2D s = model->sample(rng);
            wi = squareToSphere(s.uv);
            pdfModelAtSample = s.pdf * kInvFourPi;
        } else {
            BsdfSample bs = sampleBsdf(mat, wo, n, rng.next1D(), rng.next2D());
            if (!bs.valid)
                return out; // absorb
            wi = bs.wi;
        }
        double p0 = pdfBsdf(mat, wi, wo, n);
        double p1 = pdfModelAtSample >= 0.0 ? pdfModelAtSample
                                            : model->pdf(sphereToSquare(wi)) * kInvFourPi;
        double pdfMix = alpha0 * p0 + (1.0 - alpha0) * p1;
        if (pdfMix <= 0.0)
            continue;
        out.wi = wi;
        out.f = evalBsdf(mat, wi, wo, n);
        out.pdfBsdf = p0;
        out.pdfModel = p1;
        out.pdfMix = pdfMix;
        out.usedModel = useModel;
        out.valid = true;
        return out;
    }
    return out; // absorb after one retry
}

// ---------------------------------------------------------------------------
// ModelStore

const DirectionalModel *ModelStore::lookupWarm(const SpatioDirectionalKey &key) const {
    auto it = m_map.find(key);
    return it != m_map.end() && it->second.warm ? it->second.model.get() : nullptr;
}

void ModelStore::applyRecord(const SpatioDirectionalKey &key, const Vec2 &uv,
                             double contribution) {
    Entry &entry = m_map[key];
    if (!entry.model)
        entry.model = std::make_unique<DirectionalModel>(m_config);
    entry.model->record(uv, contribution);
    entry.cNew += 1.0;
    ++entry.records;
}

void ModelStore::endFrame() {
    bool limited = m_tMax > 0.0 && std::isfinite(m_tMax);
    double cNewSum = 0.0;
    size_t touched = 0;
    for (auto &kv : m_map) {
        if (kv.second.cNew > 0.0) {
            cNewSum += kv.second.cNew;
            ++touched;
        }
    }
    double cap = limited && touched ? (m_tMax * m_tMax - m_tMax) * (cNewSum / double(touched)) : 0.0;
    for (auto &kv : m_map) {
        Entry &entry = kv.second;
        if (entry.cNew <= 0.0)
            continue;
        double alpha = std::sqrt(entry.cNew / (entry.cOld + entry.cNew));
        if (limited)
            alpha = std::max(alpha, 1.0 / m_tMax);
        entry.model->endFrame(alpha);
        entry.cOld += entry.cNew;
        if (limited)
            entry.cOld = std::min(entry.cOld, cap);
        entry.cNew = 0.0;
        entry.warm = entry.records >= uint64_t(m_minSamples);
    }
}

// ---------------------------------------------------------------------------
// Field recording

namespace {

struct ModelRecord {
    SpatioDirectionalKey key;
    Vec2 uv;
    double contribution;
    bool profile; // hemisphere CV profile rather than a guiding model
};

} // namespace

struct EstimatorRun::WorkerSink {
    bool queued = false;
    FieldUpdateQueue qLo, qLoe, qFli, qLi;
    std::vector<ModelRecord> modelRecords;

    void increment(FieldStore *store, FieldUpdateQueue &queue, const SpatioDirectionalKey &key,
                   double w) {
        if (queued)
            queue.pushCounter(key, w);
        else
            store->incrementCounter(key, w);
    }
    void accumulate(FieldStore *store, FieldUpdateQueue &queue, const SpatioDirectionalKey &key,
                    const RGB &value, double w) {
        if (queued)
            queue.pushValue(key, value, w);
        else
            store->accumulate(key, value, w);
    }
};

namespace {

/// Wires one VertexRecord into the field stores and the directional models,
/// following the gather form of the per-frame update equations. Reads only
/// committed (previous-frame) values, so the Jacobi discipline holds.
class FieldRecorder : public PathHooks {
public:
    FieldRecorder(EstimatorRun::WorkerSink &sink, FieldStore *lo, FieldStore *loe, FieldStore *fli,
                  FieldStore *li, uint32_t loeMask, uint32_t fliMask, bool recordModels,
                  bool recordProfiles)
        : m_sink(sink), m_lo(lo), m_loe(loe), m_fli(fli), m_li(li), m_loeMask(loeMask),
          m_fliMask(fliMask), m_recordModels(recordModels), m_recordProfiles(recordProfiles) {}

    void onVertex(const VertexRecord &rec) override {
        int level = m_lo->selectLevel(rec.footprint);

        RGB loNext(0.0), loeNext(0.0);
        if (rec.contExtended) {
            if (rec.nextIsSurface) {
                Vec3 woNext = -rec.wi;
                auto qLo = m_lo->query(rec.nextPosition, woNext, rec.nextFootprint);
                if (qLo.valid)
                    loNext = qLo.value;
                auto qLoe = m_loe->query(rec.nextPosition, woNext, rec.nextFootprint);
                if (qLoe.valid)
                    loeNext = qLoe.value;
            } else {
                // the environment is an exactly known, already converged cache
                loNext = rec.nextEmission;
            }
        }
        double ratio = rec.transportRatio();

        // outgoing field: landing counter, local emission, transported cache
        SpatioDirectionalKey loKey = m_lo->keyFor(rec.position, rec.wo, level);
        m_sink.increment(m_lo, m_sink.qLo, loKey, 1.0);
        m_sink.accumulate(m_lo, m_sink.qLo, loKey, rec.emissionHere, 1.0);
        if (rec.contExtended && ratio > 0.0) {
            RGB update = computeUpdateValue(FieldKind::Lo, loNext, RGB(0.0), rec.f, ratio);
            m_sink.accumulate(m_lo, m_sink.qLo, loKey, update, 1.0);
        }

        // L_{o\e}: the next vertex's emission is MIS-weighted between this
        // segment and NEE, whose own single-transport contribution is added
        // below; indirect cache transport carries full weight
        SpatioDirectionalKey loeKey = m_loe->keyFor(rec.position, rec.wo, level);
        m_sink.increment(m_loe, m_sink.qLoe, loeKey, 1.0);
        if (rec.contExtended && ratio > 0.0 && (m_loeMask & TechContinuation)) {
            RGB update = computeUpdateValue(FieldKind::LoMinusE, loeNext,
                                            rec.nextEmission * rec.nextEmisMisWeight, rec.f, ratio);
            m_sink.accumulate(m_loe, m_sink.qLoe, loeKey, update, 1.0);
        }
        if (rec.nee.sampled && (m_loeMask & TechNee))
            m_sink.accumulate(m_loe, m_sink.qLoe, loeKey, rec.nee.value(), 1.0);

        // radiance arriving along the sampled continuation
        RGB lIncoming = rec.nextEmission * rec.nextEmisMisWeight + loeNext;

        // product field, keyed on incoming directions; counters track every
        // technique landing so masked stores stay additive
        if (rec.contExtended) {
            SpatioDirectionalKey k = m_fli->keyFor(rec.position, rec.wi, level);
            m_sink.increment(m_fli, m_sink.qFli, k, 1.0);
            if (m_fliMask & TechContinuation)
                m_sink.accumulate(m_fli, m_sink.qFli, k, rec.f * lIncoming, 1.0);
        }
        if (rec.nee.sampled) {
            SpatioDirectionalKey k = m_fli->keyFor(rec.position, rec.nee.dir, level);
            m_sink.increment(m_fli, m_sink.qFli, k, 1.0);
            if (m_fliMask & TechNee) {
                RGB value = rec.nee.f * rec.nee.radiance * rec.nee.misWeight;
                m_sink.accumulate(m_fli, m_sink.qFli, k, value, 1.0);
            }
        }

        if (m_li && rec.contExtended) {
            SpatioDirectionalKey k = m_li->keyFor(rec.position, rec.wi, level);
            m_sink.increment(m_li, m_sink.qLi, k, 1.0);
            RGB update = computeUpdateValue(FieldKind::Li, lIncoming, RGB(0.0), rec.f, 1.0);
            m_sink.accumulate(m_li, m_sink.qLi, k, update, 1.0);
        }

        if (m_recordModels && rec.contExtended && ratio > 0.0) {
            double contribution = luminance(rec.f * lIncoming) * ratio;
            if (contribution > 0.0 && std::isfinite(contribution)) {
                SpatioDirectionalKey k = m_lo->keyFor(rec.position, rec.wo, level);
                m_sink.modelRecords.push_back({k, sphereToSquare(rec.wi), contribution, false});
            }
        }

        // CV profiles learn the MIS-weighted product density on the local
        // hemisphere square from both techniques
        if (m_recordProfiles) {
            SpatioDirectionalKey k = m_lo->keyFor(rec.position, rec.wo, level);
            Frame frame = buildFrame(rec.normal);
            if (rec.contExtended && ratio > 0.0) {
                double c = luminance(rec.f * lIncoming) * ratio;
                if (c > 0.0 && std::isfinite(c)) {
                    Vec2 uv = hemisphereToSquare(frame.toLocal(rec.wi));
                    m_sink.modelRecords.push_back({k, uv, c, true});
                }
            }
            if (rec.nee.sampled && !rec.nee.radiance.isBlack() && rec.nee.cosX > 0.0 &&
                rec.nee.pdfSigma > 0.0) {
                double c = luminance(rec.nee.f * rec.nee.radiance) * rec.nee.cosX *
                           rec.nee.misWeight / rec.nee.pdfSigma;
                if (c > 0.0 && std::isfinite(c)) {
                    Vec2 uv = hemisphereToSquare(frame.toLocal(rec.nee.dir));
                    m_sink.modelRecords.push_back({k, uv, c, true});
                }
            }
        }
    }

private:
    EstimatorRun::WorkerSink &m_sink;
    FieldStore *m_lo, *m_loe, *m_fli, *m_li;
    uint32_t m_loeMask, m_fliMask;
    bool m_recordModels;
    bool m_recordProfiles;
};

} // namespace

// ---------------------------------------------------------------------------
// EstimatorRun

EstimatorRun::EstimatorRun(const Scene &scene, const EstimatorConfig &config)
    : m_scene(scene), m_config(config) {
    FieldStoreConfig base;
    base.capacityLog2 = config.hashCapacityLog2;
    base.maxLevel = config.maxLevel;
    base.baseCellSize = std::max(1e-9, scene.diameter() * config.baseCellFraction);
    base.levelSelectK = config.levelSelectK;
    base.tMax = config.tMax;

    FieldStoreConfig loCfg = base;
    loCfg.kind = FieldKind::Lo;
    m_lo = std::make_unique<FieldStore>(loCfg);
    FieldStoreConfig loeCfg = base;
    loeCfg.kind = FieldKind::LoMinusE;
    loeCfg.techniqueMask = config.loeTechniqueMask;
    m_loe = std::make_unique<FieldStore>(loeCfg);
    FieldStoreConfig fliCfg = base;
    fliCfg.kind = FieldKind::FLi;
    fliCfg.techniqueMask = config.fliTechniqueMask;
    m_fli = std::make_unique<FieldStore>(fliCfg);
    if (config.trackLi) {
        FieldStoreConfig liCfg = base;
        liCfg.kind = FieldKind::Li;
        m_li = std::make_unique<FieldStore>(liCfg);
    }
    ModelConfig modelCfg = config.model;
    modelCfg.kind = config.modelKind;
    m_models = std::make_unique<ModelStore>(modelCfg, config.tMax, config.minModelSamples);
    ModelConfig profileCfg;
    profileCfg.kind = ModelKind::Grid;
    profileCfg.gridResolution = config.profileResolution;
    m_profiles = std::make_unique<ModelStore>(profileCfg, config.tMax, config.profileMinSamples);

    if (m_config.kind == EstimatorKind::PT)
        m_config.trace.enableNee = false;
}

EstimatorRun::~EstimatorRun() = default;

RGB EstimatorRun::tracePixelEstimator(int px, int py, Rng &rng, WorkerSink &sink) {
    const Scene &scene = m_scene;
    const EstimatorConfig &cfg = m_config;
    const TraceConfig &tc = cfg.trace;
    bool recordProfiles = cfg.usesCv() || cfg.kind == EstimatorKind::B;
    FieldRecorder recorder(sink, m_lo.get(), m_loe.get(), m_fli.get(), m_li.get(),
                           cfg.loeTechniqueMask, cfg.fliTechniqueMask, cfg.usesGuiding(),
                           recordProfiles);

    CameraRay ray = generateCameraRay(scene.camera, px, py, rng.next2D());
    const double eps = 1e-6 * std::max(1.0, scene.diameter());
    const double pxAngle = pixelAngle(scene.camera);
    const bool warmPhase = m_frame >= uint64_t(cfg.warmupFrames);
    const bool guidingRun = cfg.usesGuiding() && warmPhase;

    RGB radiance(0.0);
    RGB throughput(1.0);
    Vec3 rayOrigin = ray.origin;
    Vec3 rayDir = ray.dir;
    double footprint = 0.0;
    double spread = pxAngle;
    double prevContPdf = 0.0;
    RGB cvPending(0.0); // deferred control-variate term awaiting the emission MIS weight

    VertexRecord pending;
    bool hasPending = false;
    auto firePending = [&]() {
        if (hasPending)
            recorder.onVertex(pending);
        hasPending = false;
    };

    for (int depth = 1; depth <= tc.maxDepth; ++depth) {
        auto hit = scene.intersect(rayOrigin, rayDir, eps);
        if (!hit) {
            RGB env = scene.environmentEmissive() ? scene.environment : RGB(0.0);
            double wEnv = depth > 1 ? misBalance(prevContPdf, scene.environmentPdfSolidAngle())
                                    : 1.0;
            if (!env.isBlack())
                radiance += throughput * env * wEnv;
            radiance -= cvPending * wEnv;
            if (hasPending) {
                pending.contExtended = true;
                pending.nextIsSurface = false;
                pending.nextEmission = env;
                pending.nextEmisMisWeight = wEnv;
                firePending();
            }
            return radiance;
        }

        RGB emission = scene.emissionToward(*hit, rayDir);
        double wEmis = depth > 1 ? misBalance(prevContPdf,
                                              scene.lightPdfSolidAngle(rayOrigin, rayDir, *hit))
                                 : 1.0;
        if (!emission.isBlack())
            radiance += throughput * emission * wEmis;
        radiance -= cvPending * wEmis;
        cvPending = RGB(0.0);

        footprint += hit->distance * spread;

        if (hasPending) {
            pending.contExtended = true;
            pending.nextIsSurface = true;
            pending.nextPosition = hit->position;
            pending.nextNormal = hit->normal;
            pending.nextFootprint = footprint;
            pending.nextEmission = emission;
            pending.nextEmisMisWeight = wEmis;
            firePending();
        }

        const Material &mat = scene.materials[hit->material];
        Vec3 wo = -rayDir;
        Vec3 n = hit->normal;

        VertexRecord rec;
        rec.depth = depth;
        rec.position = hit->position;
        rec.normal = n;
        rec.wo = wo;
        rec.material = hit->material;
        rec.footprint = footprint;
        rec.throughputPrefix = throughput;
        rec.emissionHere = emission;

        // biased predictor-corrector at the configured vertex
        double cvBetaLocal = 0.0;
        RGB iH(0.0);
        bool diffuseVertex = luminance(mat.diffuseAlbedo) > 0.0;
        if (cfg.kind == EstimatorKind::B && depth == cfg.biasedVertex && warmPhase) {
            auto q = m_loe->query(hit->position, wo, footprint);
            if (q.valid && diffuseVertex) {
                radiance += throughput * q.value; // predictor
                if (cfg.gamma <= 0.0) {
                    // deliberately truncated: this landing carries no tail
                    // estimate, so it must not dilute the field statistics
                    return radiance;
                }
                throughput *= cfg.gamma; // corrector residual scale
                cvBetaLocal = 1.0;
                iH = q.value;
            } else {
                m_cvFallbacks.fetch_add(1, std::memory_order_relaxed);
            }
        } else if (cfg.usesCv() && depth <= cfg.cvMaxDepth && warmPhase && cfg.beta > 0.0) {
            auto q = m_loe->query(hit->position, wo, footprint);
            if (q.valid && diffuseVertex) {
                cvBetaLocal = cfg.beta;
                iH = q.value;
                radiance += throughput * iH * cvBetaLocal; // known integral, added once
            } else {
                m_cvFallbacks.fetch_add(1, std::memory_order_relaxed);
            }
        }

        const DirectionalModel *model = nullptr;
        if (guidingRun && diffuseVertex) {
            int lv = m_lo->selectLevel(footprint);
            for (int l = lv; l <= m_config.maxLevel && !model; ++l)
                model = m_models->lookupWarm(m_lo->keyFor(hit->position, wo, l));
        }
        auto contPdfFn = [&](const Vec3 &wi) {
            return guidedPdf(mat, wo, n, model, cfg.alphaMix0, wi);
        };

        // control-variate shape: the learned hemisphere profile (uniform while
        // cold); it integrates to one over the hemisphere by construction
        const DirectionalModel *profile = nullptr;
        Frame shadingFrame;
        if (cvBetaLocal > 0.0) {
            int lv = m_lo->selectLevel(footprint);
            for (int l = lv; l <= m_config.maxLevel && !profile; ++l)
                profile = m_profiles->lookupWarm(m_lo->keyFor(hit->position, wo, l));
            shadingFrame = buildFrame(n);
        }
        auto kappa = [&](const Vec3 &dir, double cosDir) {
            if (cosDir <= 0.0)
                return 0.0;
            double pdfSquare =
                profile ? profile->pdf(hemisphereToSquare(shadingFrame.toLocal(dir))) : 1.0;
            return hemiSquarePdfToSolidAngle(pdfSquare);
        };

        rec.nee = sampleNee(scene, hit->position, n, wo, hit->material, rng, contPdfFn);
        radiance += throughput * rec.nee.value();
        if (cvBetaLocal > 0.0 && rec.nee.sampled && rec.nee.pdfSigma > 0.0) {
            // the -beta*h term, carried inside the light technique's sample
            radiance -= throughput * iH *
                        (cvBetaLocal * kappa(rec.nee.dir, rec.nee.cosX) * rec.nee.misWeight /
                         rec.nee.pdfSigma);
        }

        GuidedSample gs = guidedSampleDirection(mat, wo, n, model, cfg.alphaMix0, rng);
        if (!gs.valid) {
            recorder.onVertex(rec);
            return radiance;
        }
        double cosI = dot(gs.wi, n);
        rec.contSampled = true;
        rec.wi = gs.wi;
        rec.f = gs.f;
        rec.pdfSigma = gs.pdfMix;
        rec.pdfProj = cosI > 0.0 ? gs.pdfMix / cosI : 0.0;
        rec.usedModel = gs.usedModel;

        // zero-integral mixture control variate (needs no cache)
        if (cfg.kind == EstimatorKind::IS_CV && depth <= cfg.cvMaxDepth && warmPhase && model &&
            cfg.beta > 0.0) {
            radiance -= throughput * RGB(cfg.beta * (gs.pdfModel - gs.pdfBsdf) / gs.pdfMix);
        }

        if (cosI <= 0.0 || gs.f.isBlack()) {
            recorder.onVertex(rec);
            return radiance;
        }

        RGB throughputAtVertex = throughput;
        throughput *= gs.f * (cosI / gs.pdfMix);

        double survival = 1.0;
        if (tc.enableRr && depth >= tc.rrStartDepth) {
            survival = clamp(luminance(throughput), tc.rrClampLo, 1.0);
            rec.rrSurvival = survival;
            if (rng.next1D() >= survival) {
                recorder.onVertex(rec);
                return radiance;
            }
            throughput *= 1.0 / survival;
        }
        rec.rrSurvival = survival;

        if (cvBetaLocal > 0.0) {
            // deferred -beta*h for the continuation technique; multiplied by
            // the emission MIS weight once the next event is known, with the
            // roulette compensation kept consistent with the tail
            cvPending = throughputAtVertex * iH *
                        (cvBetaLocal * kappa(gs.wi, cosI) / (gs.pdfMix * survival));
        }

        pending = rec;
        hasPending = true;
        spread = std::max(pxAngle, 1.0 / std::sqrt(std::max(rec.pdfProj, 1e-12) * kPi));
        prevContPdf = gs.pdfMix;
        rayOrigin = hit->position;
        rayDir = gs.wi;
    }

    firePending();
    return radiance;
}

void EstimatorRun::renderFrame(ImageBuffer *accumulate) {
    const Scene &scene = m_scene;
    if (accumulate &&
        (accumulate->width() != scene.camera.width || accumulate->height() != scene.camera.height))
        throw std::invalid_argument("renderFrame: buffer dimensions do not match the camera");

    int workerCount = m_config.threads > 0 ? m_config.threads
                                           : int(std::thread::hardware_concurrency());
    workerCount = std::max(1, workerCount);

    std::vector<WorkerSink> sinks(workerCount);
    for (WorkerSink &sink : sinks)
        sink.queued = m_config.deterministic;

    bool baselineKind =
        m_config.kind == EstimatorKind::PT || m_config.kind == EstimatorKind::PT_NEE;

    bool recordProfiles = m_config.usesCv() || m_config.kind == EstimatorKind::B;
    auto renderRows = [&](int workerIndex) {
        WorkerSink &sink = sinks[workerIndex];
        FieldRecorder recorder(sink, m_lo.get(), m_loe.get(), m_fli.get(), m_li.get(),
                               m_config.loeTechniqueMask, m_config.fliTechniqueMask,
                               m_config.usesGuiding(), recordProfiles);
        for (int y = workerIndex; y < scene.camera.height; y += workerCount) {
            for (int x = 0; x < scene.camera.width; ++x) {
                uint64_t pixel = uint64_t(y) * scene.camera.width + x;
                for (int s = 0; s < m_config.sppPerFrame; ++s) {
                    Rng rng(m_config.seed,
                            streamId(m_frame * uint64_t(m_config.sppPerFrame) + s, pixel));
                    RGB value = baselineKind
                                    ? tracePath(scene, m_config.trace, x, y, rng, &recorder)
                                    : tracePixelEstimator(x, y, rng, sink);
                    if (accumulate)
                        accumulate->addSample(x, y, value);
                }
            }
        }
    };

    if (workerCount == 1) {
        renderRows(0);
    } else {
        std::vector<std::thread> workers;
        workers.reserve(workerCount);
        for (int w = 0; w < workerCount; ++w)
            workers.emplace_back(renderRows, w);
        for (auto &worker : workers)
            worker.join();
    }

    if (m_config.deterministic) {
        FieldUpdateQueue lo, loe, fli, li;
        for (WorkerSink &sink : sinks) {
            lo.append(std::move(sink.qLo));
            loe.append(std::move(sink.qLoe));
            fli.append(std::move(sink.qFli));
            li.append(std::move(sink.qLi));
        }
        lo.apply(*m_lo);
        loe.apply(*m_loe);
        fli.apply(*m_fli);
        if (m_li)
            li.apply(*m_li);
    }

    // model records: canonical order keeps the batched EM reproducible for
    // any worker count in deterministic mode
    std::vector<ModelRecord> records;
    for (WorkerSink &sink : sinks) {
        records.insert(records.end(), sink.modelRecords.begin(), sink.modelRecords.end());
        sink.modelRecords.clear();
    }
    if (m_config.deterministic) {
        std::sort(records.begin(), records.end(), [](const ModelRecord &a, const ModelRecord &b) {
            return std::tie(a.profile, a.key.level, a.key.cell[0], a.key.cell[1], a.key.cell[2],
                            a.key.dirCell[0], a.key.dirCell[1], a.uv.x, a.uv.y, a.contribution) <
                   std::tie(b.profile, b.key.level, b.key.cell[0], b.key.cell[1], b.key.cell[2],
                            b.key.dirCell[0], b.key.dirCell[1], b.uv.x, b.uv.y, b.contribution);
        });
    }
    for (const ModelRecord &r : records) {
        if (r.profile)
            m_profiles->applyRecord(r.key, r.uv, r.contribution);
        else
            m_models->applyRecord(r.key, r.uv, r.contribution);
    }

    m_lo->endFrame();
    m_loe->endFrame();
    m_fli->endFrame();
    if (m_li)
        m_li->endFrame();
    m_models->endFrame();
    m_profiles->endFrame();
    ++m_frame;
}

RunResult runEstimator(const Scene &scene, const EstimatorConfig &config, int frames,
                       const Image *reference) {
    EstimatorRun run(scene, config);
    for (int f = 0; f < config.warmupFrames; ++f)
        run.renderFrame(nullptr);

    ImageBuffer buffer(scene.camera.width, scene.camera.height);
    RunResult result;
    auto start = std::chrono::steady_clock::now();
    for (int f = 1; f <= frames; ++f) {
        run.renderFrame(&buffer);
        FrameStat stat;
        stat.frame = uint64_t(f);
        stat.wallMs = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                                start)
                          .count();
        if (reference) {
            Image current;
            current.width = buffer.width();
            current.height = buffer.height();
            current.pixels = buffer.means();
            stat.rmse = rmse(current, *reference);
        }
        result.frameStats.push_back(stat);
    }
    result.image.width = buffer.width();
    result.image.height = buffer.height();
    result.image.pixels = buffer.means();
    return result;
}

} // namespace pstf
