// pstf is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include "pstf/pathtracer.h"

#include <stdexcept>
#include <thread>
#include <vector>

namespace pstf {

namespace {

double rayEpsilon(const Scene &scene) {
    return 1e-6 * std::max(1.0, scene.diameter());
}

} // namespace

NeeSample sampleNee(const Scene &scene, const Vec3 &position, const Vec3 &normal, const Vec3 &wo,
                    int material, Rng &rng, const ContinuationPdf &contPdf) {
    NeeSample out;
    double uSelect = rng.next1D();
    Vec2 u = rng.next2D();
    auto ls = scene.sampleLight(position, uSelect, u);
    if (!ls)
        return out;

    const double eps = rayEpsilon(scene);
    const Material &mat = scene.materials[material];

    if (ls->isEnvironment) {
        out.sampled = true;
        out.dir = ls->direction;
        out.pdfSigma = ls->pdfSolidAngle;
        out.cosX = dot(out.dir, normal);
        out.f = evalBsdf(mat, out.dir, wo, normal);
        out.occluded = scene.intersect(position, out.dir, eps).has_value();
        out.radiance = out.occluded ? RGB(0.0) : ls->emission;
        out.misWeight = misBalance(out.pdfSigma, contPdf ? contPdf(out.dir) : 0.0);
        return out;
    }

    Vec3 toLight = ls->point - position;
    double distSq = lengthSq(toLight);
    if (distSq <= eps * eps)
        return out;
    double dist = std::sqrt(distSq);
    Vec3 dir = toLight / dist;

    Vec3 lightNormal = ls->normal;
    bool twoSided = scene.materials[scene.primitives[ls->primitive].material].twoSided;
    double cosLight = dot(lightNormal, -dir);
    if (twoSided && cosLight < 0.0) {
        cosLight = -cosLight;
        lightNormal = -lightNormal; // face the receiver
    }
    if (cosLight <= 1e-9)
        return out; // grazing or back side of a one-sided emitter

    out.sampled = true;
    out.dir = dir;
    out.pdfSigma = ls->pdfArea * distSq / cosLight;
    out.cosX = dot(dir, normal);
    out.f = evalBsdf(mat, dir, wo, normal);
    out.occluded = scene.occluded(position + normal * eps, ls->point + lightNormal * eps);
    out.radiance = out.occluded ? RGB(0.0) : ls->emission;
    out.misWeight = misBalance(out.pdfSigma, contPdf ? contPdf(dir) : 0.0);
    return out;
}

RGB nextEventEstimation(const Scene &scene, const Vec3 &position, const Vec3 &normal,
                        const Vec3 &wo, int material, Rng &rng) {
    const Material &mat = scene.materials[material];
    NeeSample s = sampleNee(scene, position, normal, wo, material, rng,
                            [&](const Vec3 &wi) { return pdfBsdf(mat, wi, wo, normal); });
    return s.value();
}

RGB tracePath(const Scene &scene, const TraceConfig &config, int px, int py, Rng &rng,
              PathHooks *hooks) {
    CameraRay ray = generateCameraRay(scene.camera, px, py, rng.next2D());
    const double eps = rayEpsilon(scene);
    const double pxAngle = pixelAngle(scene.camera);

    RGB radiance(0.0);
    RGB throughput(1.0);
    Vec3 rayOrigin = ray.origin;
    Vec3 rayDir = ray.dir;
    double footprint = 0.0;
    double spread = pxAngle;
    double prevContPdf = 0.0; // camera segment carries no MIS partner

    VertexRecord pending;
    bool hasPending = false;
    auto firePending = [&]() {
        if (hasPending && hooks)
            hooks->onVertex(pending);
        hasPending = false;
    };

    for (int depth = 1; depth <= config.maxDepth; ++depth) {
        auto hit = scene.intersect(rayOrigin, rayDir, eps);
        if (!hit) {
            RGB env = scene.environmentEmissive() ? scene.environment : RGB(0.0);
            double wEnv = 1.0;
            if (!env.isBlack()) {
                if (config.enableNee && depth > 1)
                    wEnv = misBalance(prevContPdf, scene.environmentPdfSolidAngle());
                radiance += throughput * env * wEnv;
            }
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
        double wEmis = 1.0;
        if (!emission.isBlack()) {
            if (config.enableNee && depth > 1)
                wEmis = misBalance(prevContPdf, scene.lightPdfSolidAngle(rayOrigin, rayDir, *hit));
            radiance += throughput * emission * wEmis;
        }

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

        VertexRecord rec;
        rec.depth = depth;
        rec.position = hit->position;
        rec.normal = hit->normal;
        rec.wo = wo;
        rec.material = hit->material;
        rec.footprint = footprint;
        rec.throughputPrefix = throughput;
        rec.emissionHere = emission;

        if (config.enableNee) {
            rec.nee = sampleNee(scene, hit->position, hit->normal, wo, hit->material, rng,
                                [&](const Vec3 &wi) { return pdfBsdf(mat, wi, wo, hit->normal); });
            radiance += throughput * rec.nee.value();
        }

        BsdfSample bs = sampleBsdf(mat, wo, hit->normal, rng.next1D(), rng.next2D());
        if (!bs.valid) {
            if (hooks)
                hooks->onVertex(rec);
            return radiance;
        }
        double cosI = dot(bs.wi, hit->normal);
        rec.contSampled = true;
        rec.wi = bs.wi;
        rec.f = bs.f;
        rec.pdfSigma = bs.pdf;
        rec.pdfProj = cosI > 0.0 ? bs.pdf / cosI : 0.0;

        if (cosI <= 0.0 || bs.f.isBlack()) {
            // a glossy lobe sample below the horizon carries no energy
            if (hooks)
                hooks->onVertex(rec);
            return radiance;
        }

        throughput *= bs.f * (cosI / bs.pdf);

        if (config.enableRr && depth >= config.rrStartDepth) {
            double survival = clamp(luminance(throughput), config.rrClampLo, 1.0);
            rec.rrSurvival = survival;
            if (rng.next1D() >= survival) {
                if (hooks)
                    hooks->onVertex(rec);
                return radiance;
            }
            throughput *= 1.0 / survival;
        }

        pending = rec;
        hasPending = hooks != nullptr;

        spread = std::max(pxAngle, 1.0 / std::sqrt(std::max(rec.pdfProj, 1e-12) * kPi));
        prevContPdf = bs.pdf;
        rayOrigin = hit->position;
        rayDir = bs.wi;
    }

    firePending(); // max depth reached; last vertex never extended
    return radiance;
}

void renderFrame(const Scene &scene, const TraceConfig &config, ImageBuffer &buffer,
                 uint64_t frameIndex, uint64_t seed, int sppPerFrame, int threads,
                 PathHooks *hooks) {
    if (buffer.width() != scene.camera.width || buffer.height() != scene.camera.height)
        throw std::invalid_argument("renderFrame: buffer dimensions do not match the camera");

    int workerCount = threads > 0 ? threads : int(std::thread::hardware_concurrency());
    workerCount = std::max(1, workerCount);

    auto renderRows = [&](int startRow, int stride) {
        for (int y = startRow; y < scene.camera.height; y += stride) {
            for (int x = 0; x < scene.camera.width; ++x) {
                uint64_t pixel = uint64_t(y) * scene.camera.width + x;
                for (int s = 0; s < sppPerFrame; ++s) {
                    Rng rng(seed, streamId(frameIndex * uint64_t(sppPerFrame) + s, pixel));
                    buffer.addSample(x, y, tracePath(scene, config, x, y, rng, hooks));
                }
            }
        }
    };

    if (workerCount == 1) {
        renderRows(0, 1);
        return;
    }
    std::vector<std::thread> workers;
    workers.reserve(workerCount);
    for (int w = 0; w < workerCount; ++w)
        workers.emplace_back(renderRows, w, workerCount);
    for (auto &worker : workers)
        worker.join();
}

} // namespace pstf
