// pstf is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pstf/estimators.h"
#include "pstf/image.h"
#include "pstf/scene.h"

using nlohmann::json;
using namespace pstf;

namespace {

// exit codes: 0 ok, 2 usage, 3 scene error, 4 image/file I/O, 5 dimension mismatch
constexpr int kExitUsage = 2;
constexpr int kExitScene = 3;
constexpr int kExitIo = 4;
constexpr int kExitDimensions = 5;

struct CommonOptions {
    std::string scenePath;
    std::string estimator = "pt-nee";
    std::string model = "grid";
    int spp = 0;
    double seconds = 0.0;
    int warmup = 32;
    double beta = 0.75;
    double gamma = 0.0;
    double alpha0 = 0.5;
    int cvDepth = 2;
    int biasedVertex = 2;
    double tMax = 64.0;
    uint64_t seed = 0;
    int threads = 0;
    int sppPerFrame = 1;
    int hashBits = 18;
    bool deterministic = false;
};

void addEstimatorFlags(CLI::App *cmd, CommonOptions &opt) {
    cmd->add_option("--scene", opt.scenePath, "Scene file")->required();
    cmd->add_option("--estimator", opt.estimator, "pt|pt-nee|is|cv|is-cv|b");
    cmd->add_option("--model", opt.model, "grid|kdtree|gmm");
    cmd->add_option("--spp", opt.spp, "Total samples per pixel");
    cmd->add_option("--seconds", opt.seconds, "Time budget in seconds");
    cmd->add_option("--warmup", opt.warmup, "Warm-up frames (field updates only)");
    cmd->add_option("--beta", opt.beta, "Control-variate strength");
    cmd->add_option("--gamma", opt.gamma, "Predictor-corrector residual scale");
    cmd->add_option("--alpha0", opt.alpha0, "BSDF fraction of the guiding mixture");
    cmd->add_option("--cv-depth", opt.cvDepth, "Max vertex depth for the control variate");
    cmd->add_option("--biased-vertex", opt.biasedVertex, "Vertex index for the biased estimator");
    cmd->add_option("--tmax", opt.tMax, "Temporal window cap");
    cmd->add_option("--seed", opt.seed, "RNG seed");
    cmd->add_option("--threads", opt.threads, "Worker threads (0: hardware)");
    cmd->add_option("--spp-per-frame", opt.sppPerFrame, "Samples per pixel per frame");
    cmd->add_option("--hash-bits", opt.hashBits, "log2 of the field hash capacity");
    cmd->add_flag("--deterministic", opt.deterministic,
                  "Fixed-order reductions; bit-identical output for any worker count");
}

EstimatorConfig makeConfig(const CommonOptions &opt) {
    EstimatorConfig config;
    if (!parseEstimatorKind(opt.estimator, config.kind))
        throw CLI::ValidationError("--estimator", "unknown estimator '" + opt.estimator + "'");
    if (!parseModelKind(opt.model, config.modelKind))
        throw CLI::ValidationError("--model", "unknown model '" + opt.model + "'");
    config.beta = opt.beta;
    config.gamma = opt.gamma;
    config.alphaMix0 = opt.alpha0;
    config.cvMaxDepth = opt.cvDepth;
    config.biasedVertex = opt.biasedVertex;
    config.warmupFrames = opt.warmup;
    config.tMax = opt.tMax;
    config.seed = opt.seed;
    config.threads = opt.threads;
    config.sppPerFrame = opt.sppPerFrame;
    config.hashCapacityLog2 = uint32_t(opt.hashBits);
    config.deterministic = opt.deterministic;
    return config;
}

json configToJson(const CommonOptions &opt, const EstimatorConfig &config) {
    json j;
    j["scene"] = opt.scenePath;
    j["estimator"] = estimatorName(config.kind);
    j["model"] = opt.model;
    j["spp"] = opt.spp;
    j["seconds"] = opt.seconds;
    j["warmup"] = config.warmupFrames;
    j["beta"] = config.beta;
    j["gamma"] = config.gamma;
    j["alpha0"] = config.alphaMix0;
    j["cv_depth"] = config.cvMaxDepth;
    j["biased_vertex"] = config.biasedVertex;
    j["tmax"] = config.tMax;
    j["seed"] = config.seed;
    j["spp_per_frame"] = config.sppPerFrame;
    j["hash_bits"] = config.hashCapacityLog2;
    j["deterministic"] = config.deterministic;
    return j;
}

void writeSidecar(const std::string &imagePath, const json &metadata) {
    std::ofstream out(imagePath + ".json");
    if (!out)
        throw ImageIoError("cannot write sidecar for '" + imagePath + "'");
    out << metadata.dump(2) << "\n";
}

Image bufferToImage(const ImageBuffer &buffer) {
    Image img;
    img.width = buffer.width();
    img.height = buffer.height();
    img.pixels = buffer.means();
    return img;
}

int cmdRender(const CommonOptions &opt, const std::string &outPath, const std::string &ppmPath,
              const std::string &referencePath) {
    if ((opt.spp > 0) == (opt.seconds > 0.0)) {
        std::cerr << "render: exactly one of --spp or --seconds must be set\n";
        return kExitUsage;
    }
    Scene scene = loadScene(opt.scenePath);
    EstimatorConfig config = makeConfig(opt);

    EstimatorRun run(scene, config);
    auto start = std::chrono::steady_clock::now();
    for (int f = 0; f < config.warmupFrames; ++f)
        run.renderFrame(nullptr);

    ImageBuffer buffer(scene.camera.width, scene.camera.height);
    int frames = 0;
    if (opt.spp > 0) {
        int total = std::max(1, opt.spp / std::max(1, config.sppPerFrame));
        for (; frames < total; ++frames)
            run.renderFrame(&buffer);
    } else {
        while (std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() <
               opt.seconds) {
            run.renderFrame(&buffer);
            ++frames;
        }
    }
    double wallMs =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();

    Image image = bufferToImage(buffer);
    writePfm(outPath, image);
    if (!ppmPath.empty())
        writePpm(ppmPath, image);

    json meta = configToJson(opt, config);
    meta["frames"] = frames;
    meta["wall_ms"] = wallMs;
    meta["output"] = outPath;
    if (!referencePath.empty()) {
        Image reference = readPfm(referencePath);
        meta["rmse_vs_reference"] = rmse(image, reference);
        meta["reference"] = referencePath;
    }
    writeSidecar(outPath, meta);
    return 0;
}

int cmdReference(const CommonOptions &opt, const std::string &outPath) {
    if (opt.spp <= 0) {
        std::cerr << "reference: --spp must be positive\n";
        return kExitUsage;
    }
    Scene scene = loadScene(opt.scenePath);
    CommonOptions refOpt = opt;
    refOpt.estimator = scene.hasEmitters() ? "pt-nee" : "pt";
    EstimatorConfig config = makeConfig(refOpt);
    config.warmupFrames = 0;

    EstimatorRun run(scene, config);
    ImageBuffer buffer(scene.camera.width, scene.camera.height);
    auto start = std::chrono::steady_clock::now();
    int frames = std::max(1, opt.spp / std::max(1, config.sppPerFrame));
    for (int f = 0; f < frames; ++f)
        run.renderFrame(&buffer);
    double wallMs =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();

    Image image = bufferToImage(buffer);
    writePfm(outPath, image);

    Image variance;
    variance.width = image.width;
    variance.height = image.height;
    variance.pixels.resize(image.pixels.size());
    for (size_t i = 0; i < variance.pixels.size(); ++i)
        variance.pixels[i] = buffer.varianceOfMean(i);
    writePfm(outPath + ".var.pfm", variance);

    json meta = configToJson(refOpt, config);
    meta["frames"] = frames;
    meta["wall_ms"] = wallMs;
    meta["output"] = outPath;
    meta["variance_output"] = outPath + ".var.pfm";
    writeSidecar(outPath, meta);
    return 0;
}

int cmdCompare(const std::string &pathA, const std::string &pathB, const std::string &diffPath) {
    Image a = readPfm(pathA);
    Image b = readPfm(pathB);
    if (a.width != b.width || a.height != b.height) {
        std::cerr << "compare: dimension mismatch (" << a.width << "x" << a.height << " vs "
                  << b.width << "x" << b.height << ")\n";
        return kExitDimensions;
    }
    double err = rmse(a, b);
    std::printf("RMSE %.12g\n", err);
    if (!diffPath.empty())
        writePfm(diffPath, absDifference(a, b));
    return 0;
}

int cmdConvergence(const CommonOptions &opt, const std::string &referencePath,
                   const std::string &outPath, std::vector<int> checkpoints) {
    if (referencePath.empty()) {
        std::cerr << "convergence: --reference is required\n";
        return kExitUsage;
    }
    Scene scene = loadScene(opt.scenePath);
    Image reference = readPfm(referencePath);
    if (reference.width != scene.camera.width || reference.height != scene.camera.height) {
        std::cerr << "convergence: reference dimensions do not match the scene camera\n";
        return kExitDimensions;
    }
    if (checkpoints.empty()) {
        std::cerr << "convergence: at least one --checkpoint is required\n";
        return kExitUsage;
    }
    std::sort(checkpoints.begin(), checkpoints.end());
    EstimatorConfig config = makeConfig(opt);
    RunResult result = runEstimator(scene, config, checkpoints.back(), &reference);

    std::ofstream out(outPath);
    if (!out)
        throw ImageIoError("cannot open '" + outPath + "' for writing");
    out << "# pstf-convergence v1\n";
    out << "frame,wall_ms,rmse\n";
    for (int checkpoint : checkpoints) {
        const FrameStat &stat = result.frameStats.at(size_t(checkpoint) - 1);
        char line[128];
        std::snprintf(line, sizeof(line), "%llu,%.3f,%.9g\n",
                      static_cast<unsigned long long>(stat.frame), stat.wallMs, stat.rmse);
        out << line;
    }
    return 0;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"pstf: a path tracer with progressive spatio-temporal light-field filtering"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Config file with the same keys as the flags");

    CommonOptions renderOpt, refOpt, convOpt;
    std::string outPath, ppmPath, referencePath;
    std::string refOutPath;
    std::string cmpA, cmpB, cmpDiff;
    std::string convReference, convOut;
    std::vector<int> checkpoints;

    CLI::App *render = app.add_subcommand("render", "Render a scene with a chosen estimator");
    addEstimatorFlags(render, renderOpt);
    render->add_option("--out", outPath, "Output PFM path")->required();
    render->add_option("--ppm", ppmPath, "Also write a tone-mapped PPM");
    render->add_option("--reference", referencePath, "Reference PFM for RMSE metadata");

    CLI::App *reference = app.add_subcommand("reference", "Brute-force PT+NEE reference render");
    addEstimatorFlags(reference, refOpt);
    reference->add_option("--out", refOutPath, "Output PFM path")->required();

    CLI::App *compare = app.add_subcommand("compare", "RMSE between two PFM images");
    compare->add_option("--a", cmpA, "First image")->required();
    compare->add_option("--b", cmpB, "Second image")->required();
    compare->add_option("--diff", cmpDiff, "Optional per-pixel absolute difference PFM");

    CLI::App *convergence =
        app.add_subcommand("convergence", "Per-frame RMSE against a reference, written as CSV");
    addEstimatorFlags(convergence, convOpt);
    convergence->add_option("--reference", convReference, "Reference PFM")->required();
    convergence->add_option("--out", convOut, "Output CSV path")->required();
    convergence->add_option("--checkpoint", checkpoints, "Frame checkpoints (repeatable)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (render->parsed())
            return cmdRender(renderOpt, outPath, ppmPath, referencePath);
        if (reference->parsed())
            return cmdReference(refOpt, refOutPath);
        if (compare->parsed())
            return cmdCompare(cmpA, cmpB, cmpDiff);
        if (convergence->parsed())
            return cmdConvergence(convOpt, convReference, convOut, checkpoints);
    } catch (const SceneError &e) {
        std::cerr << "scene error: " << e.what() << "\n";
        return kExitScene;
    } catch (const ImageIoError &e) {
        std::cerr << "image error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
