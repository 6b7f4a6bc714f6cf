// pstf is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "pstf/rng.h"
#include "pstf/vecmath.h"

namespace pstf {

// Per-spatial-cell incoming-direction distributions over the square sphere
// parameterization [0,1]^2. Densities below are per unit square area; divide
// by 4*pi for the solid-angle density. All three kinds share the same
// record / endFrame / pdf / sample contract so estimators stay agnostic.

struct Sample2D {
    Vec2 uv;
    double pdf = 0.0; // square measure
};

// ---------------------------------------------------------------------------

class DirGrid {
public:
    explicit DirGrid(int resolution = 16);

    void record(const Vec2 &uv, double contribution);
    void endFrame(double blend, double tSplit = 0.0);
    double pdf(const Vec2 &uv) const;
    Sample2D sample(const Vec2 &u) const;

    int resolution() const { return m_res; }
    double weight(int ix, int iy) const { return m_weights[size_t(iy) * m_res + ix]; }
    double total() const { return m_total; }
    uint64_t recordCount() const { return m_recordCount; }

private:
    int cellIndex(const Vec2 &uv) const;

    int m_res;
    std::vector<double> m_weights;
    std::vector<double> m_accum;
    double m_total = 0.0;
    uint64_t m_recordCount = 0;
};

// ---------------------------------------------------------------------------

/// Fixed-leaf-count k-d tree over [0,1]^2. The node count 2L-1 is invariant
/// under all topology updates; the split-collapse step moves refinement from
/// the coldest leaf pair to the hottest leaf.
class SphericalKdTree {
public:
    explicit SphericalKdTree(int leafCount = 64); // power of two

    void record(const Vec2 &uv, double contribution);
    /// Blends leaf probabilities toward the frame's normalized contribution
    /// sums (with an epsilon floor), then applies one split-collapse step when
    /// P(l_max) > tSplit * P(p_min).
    void endFrame(double blend, double tSplit);
    double pdf(const Vec2 &uv) const;
    /// Hierarchical sample warping; a bijection of [0,1]^2 given the tree.
    Sample2D sample(const Vec2 &u) const;

    int leafCount() const { return m_leafCount; }
    int nodeCount() const { return int(m_nodes.size()); }
    uint64_t recordCount() const { return m_recordCount; }

    struct LeafInfo {
        Vec2 lo, hi;
        double prob;
        int node;
    };
    std::vector<LeafInfo> leaves() const;
    double leafProbabilitySum() const;
    /// Leaf rectangles partition [0,1]^2; exposed for the topology tests.
    bool checkInvariants(double tol = 1e-9) const;

    std::vector<uint8_t> serialize() const;
    static SphericalKdTree deserialize(std::span<const uint8_t> bytes);
    bool operator==(const SphericalKdTree &o) const;

private:
    struct Node {
        bool leaf = true;
        uint8_t axis = 0;   // 0: u, 1: v
        double split = 0.5; // relative to the node extent
        int32_t left = -1, right = -1, parent = -1;
        double prob = 0.0;  // leaves
        double accum = 0.0; // leaves, per-frame
        double mass = 0.0;  // cached subtree probability
    };

    void buildUniform(int node, int depth, int leavesBelow);
    void refreshMass(int node);
    int findLeaf(const Vec2 &uv, Vec2 &lo, Vec2 &hi) const;

    int m_leafCount;
    std::vector<Node> m_nodes;
    int m_root = 0;
    uint64_t m_recordCount = 0;
};

// ---------------------------------------------------------------------------

struct GmmConfig {
    int components = 4;
    double alphaEm = 0.7;        // step exponent in (0.5, 1]
    double sigmaMinSq = 2.5e-5;  // covariance eigenvalue floor
    double sigmaMaxSq = 0.04;    // cap keeps the 3x3 torus wrap accurate
    double reseedFraction = 1e-4;
};

/// 2-D Gaussian mixture on the torus [0,1)^2 trained by stepwise EM.
/// Sufficient statistics are a C x 8 matrix updated by the decaying
/// recurrence; the batch form reproduces the sequential recurrence exactly
/// (frozen-parameter responsibilities) via prefix sums of log(1 - k^-alpha).
class Gmm {
public:
    explicit Gmm(const GmmConfig &config = {});

    int components() const { return m_config.components; }
    const GmmConfig &config() const { return m_config; }

    void responsibilities(const Vec2 &s, std::span<double> gamma) const;
    void estepSequential(const Vec2 &s, double w);
    void estepBatch(std::span<const std::pair<Vec2, double>> samples);
    void mstep();

    double pdf(const Vec2 &uv) const;
    Sample2D sample(double uSelect, const Vec2 &u) const;

    void record(const Vec2 &uv, double contribution);
    void endFrame(double blend, double tSplit = 0.0); // batch E-step + M-step

    uint64_t sampleIndex() const { return m_i; }
    uint64_t recordCount() const { return m_recordCount; }
    uint64_t underflowCount() const { return m_underflows; }
    double weight(int c) const { return m_weights[c]; }
    Vec2 mean(int c) const { return m_means[c]; }
    /// Covariance as (cxx, cxy, cyy).
    std::array<double, 3> covariance(int c) const { return m_cov[c]; }
    const std::array<double, 8> &stats(int c) const { return m_u[c]; }
    void setStats(int c, const std::array<double, 8> &u) { m_u[c] = u; }
    void setComponent(int c, double weight, const Vec2 &mean, const std::array<double, 3> &cov);

    std::vector<uint8_t> serialize() const;
    static Gmm deserialize(std::span<const uint8_t> bytes);
    bool operator==(const Gmm &o) const;

private:
    double componentPdf(int c, const Vec2 &uv) const; // torus-wrapped
    void rebuildCache();

    GmmConfig m_config;
    std::vector<double> m_weights;
    std::vector<Vec2> m_means;
    std::vector<std::array<double, 3>> m_cov; // (cxx, cxy, cyy)
    std::vector<std::array<double, 8>> m_u;
    uint64_t m_i = 0;
    uint64_t m_recordCount = 0;
    mutable uint64_t m_underflows = 0;
    std::vector<std::pair<Vec2, double>> m_frameSamples;
    // cached per component: inverse covariance + normalization
    struct Cache {
        double inv[3];
        double norm;
        double chol[3]; // (l11, l21, l22)
    };
    std::vector<Cache> m_cache;
    uint32_t m_reseedCounter = 0;
};

// ---------------------------------------------------------------------------

enum class ModelKind { Grid, KdTree, Gmm };

struct ModelConfig {
    ModelKind kind = ModelKind::Grid;
    int gridResolution = 16;
    int kdLeafCount = 64;
    double kdSplitThreshold = 4.0;
    GmmConfig gmm;
};

/// Uniform facade over the three model kinds.
class DirectionalModel {
public:
    explicit DirectionalModel(const ModelConfig &config);

    void record(const Vec2 &uv, double contribution);
    void endFrame(double blend);
    double pdf(const Vec2 &uv) const;
    Sample2D sample(Rng &rng) const;
    uint64_t recordCount() const;
    ModelKind kind() const { return m_config.kind; }

private:
    ModelConfig m_config;
    std::variant<DirGrid, SphericalKdTree, Gmm> m_impl;
};

} // namespace pstf
