// pstf is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include <doctest.h>

#include <cstring>
#include <random>

#include "pstf/mappings.h"
#include "pstf/models.h"
#include "support/helpers.h"

using namespace pstf;
using namespace pstf::test;

// ---------------------------------------------------------------------------
// DirGrid

TEST_CASE("grid: uniform weights give the uniform solid-angle pdf") {
    DirGrid grid(16);
    Rng rng(40, 0);
    for (int i = 0; i < 100; ++i) {
        double p = grid.pdf(rng.next2D());
        CHECK(p == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(squarePdfToSolidAngle(p) == doctest::Approx(1.0 / kFourPi).epsilon(1e-12));
    }
}

TEST_CASE("grid: all weight in one cell concentrates the samples") {
    DirGrid grid(8);
    grid.record(Vec2(0.4, 0.7), 5.0);
    grid.endFrame(1.0);
    Rng rng(41, 0);
    for (int i = 0; i < 1000; ++i) {
        Sample2D s = grid.sample(rng.next2D());
        CHECK(int(s.uv.x * 8) == 3);
        CHECK(int(s.uv.y * 8) == 5);
        CHECK(s.pdf == doctest::Approx(64.0).epsilon(1e-9));
    }
}

TEST_CASE("grid: sampled frequencies match the pdf") {
    DirGrid grid(4);
    Rng seed(42, 0);
    for (int i = 0; i < 200; ++i)
        grid.record(seed.next2D(), seed.next1D());
    grid.endFrame(1.0);

    Rng rng(43, 0);
    const int n = 100000;
    std::vector<double> counts(16, 0.0), expected(16, 0.0);
    for (int i = 0; i < n; ++i) {
        Sample2D s = grid.sample(rng.next2D());
        int cell = std::min(int(s.uv.y * 4), 3) * 4 + std::min(int(s.uv.x * 4), 3);
        counts[cell] += 1.0;
        CHECK(s.pdf == doctest::Approx(grid.pdf(s.uv)).epsilon(1e-9));
    }
    for (int cell = 0; cell < 16; ++cell) {
        Vec2 center((cell % 4 + 0.5) / 4.0, (cell / 4 + 0.5) / 4.0);
        expected[cell] = grid.pdf(center) / 16.0 * n;
    }
    CHECK(chiSquarePasses(chiSquareStatistic(counts, expected), 15));
}

TEST_CASE("grid: empty grid falls back to uniform sampling") {
    DirGrid grid(8);
    // never recorded and never committed: weights are uniform by construction
    Rng rng(44, 0);
    Sample2D s = grid.sample(rng.next2D());
    CHECK(s.pdf == doctest::Approx(1.0).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// SphericalKdTree

namespace {

/// Independent oracle: re-parses the snapshot bytes into its own node table
/// and performs CDF-style interval inversion per node with explicit rectangle
/// and mass bookkeeping.
struct KdOracle {
    struct Node {
        bool leaf;
        int axis;
        double split;
        int left, right, parent;
        double prob;
    };
    std::vector<Node> nodes;

    explicit KdOracle(const SphericalKdTree &tree) {
        auto bytes = tree.serialize();
        size_t pos = 8; // magic
        auto rd = [&](void *p, size_t n) {
            std::memcpy(p, bytes.data() + pos, n);
            pos += n;
        };
        int32_t leafCount = 0;
        rd(&leafCount, 4);
        nodes.resize(size_t(2 * leafCount - 1));
        for (Node &n : nodes) {
            uint8_t leaf, axis;
            int32_t left, right, parent;
            rd(&leaf, 1);
            rd(&axis, 1);
            rd(&n.split, 8);
            rd(&left, 4);
            rd(&right, 4);
            rd(&parent, 4);
            rd(&n.prob, 8);
            n.leaf = leaf != 0;
            n.axis = axis;
            n.left = left;
            n.right = right;
            n.parent = parent;
        }
    }

    double mass(int idx) const {
        const Node &n = nodes[idx];
        return n.leaf ? n.prob : mass(n.left) + mass(n.right);
    }

    Sample2D sample(Vec2 u) const {
        Vec2 lo(0.0, 0.0), hi(1.0, 1.0);
        int idx = 0;
        while (!nodes[idx].leaf) {
            const Node &n = nodes[idx];
            double total = mass(idx);
            double leftFrac = total > 0.0 ? mass(n.left) / total : 0.5;
            double cut = n.axis == 0 ? lo.x + n.split * (hi.x - lo.x)
                                     : lo.y + n.split * (hi.y - lo.y);
            double &coord = n.axis == 0 ? u.x : u.y;
            // interval CDF inversion: [0, leftFrac) -> left, rescaled
            if (leftFrac > 0.0 && (coord < leftFrac || leftFrac >= 1.0)) {
                coord = std::min(coord / leftFrac, std::nexttoward(1.0, 0.0));
                (n.axis == 0 ? hi.x : hi.y) = cut;
                idx = n.left;
            } else {
                coord = std::min((coord - leftFrac) / (1.0 - leftFrac),
                                 std::nexttoward(1.0, 0.0));
                (n.axis == 0 ? lo.x : lo.y) = cut;
                idx = n.right;
            }
        }
        Sample2D s;
        s.uv = {lo.x + u.x * (hi.x - lo.x), lo.y + u.y * (hi.y - lo.y)};
        double area = (hi.x - lo.x) * (hi.y - lo.y);
        s.pdf = area > 0.0 ? nodes[idx].prob / area : 0.0;
        return s;
    }
};

} // namespace

TEST_CASE("kdtree: uniform tree warps with the identity map") {
    SphericalKdTree tree(16);
    Rng rng(45, 0);
    for (int i = 0; i < 200; ++i) {
        Vec2 u = rng.next2D();
        Sample2D s = tree.sample(u);
        CHECK(s.uv.x == doctest::Approx(u.x).epsilon(1e-9));
        CHECK(s.uv.y == doctest::Approx(u.y).epsilon(1e-9));
        CHECK(s.pdf == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("kdtree: degenerate two-leaf distribution") {
    SphericalKdTree tree(2);
    // all contribution in the left leaf (u < 0.5)
    tree.record(Vec2(0.2, 0.5), 10.0);
    tree.endFrame(1.0, 1e9); // huge threshold: no topology change
    Rng rng(46, 0);
    double floorProb = (1e-4 / 2.0);
    double expectedPdf = (1.0 - floorProb / (1.0 + 2 * floorProb) * 1.0) * 2.0;
    int leftCount = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        Sample2D s = tree.sample(rng.next2D());
        if (s.uv.x < 0.5)
            ++leftCount;
    }
    CHECK(double(leftCount) / n > 0.999);
    (void)expectedPdf;
}

TEST_CASE("kdtree: warp matches the explicit oracle") {
    SphericalKdTree tree(16);
    Rng seed(47, 0);
    for (int round = 0; round < 4; ++round) {
        for (int i = 0; i < 500; ++i) {
            Vec2 uv = seed.next2D();
            tree.record({sqr(uv.x), uv.y}, 0.1 + seed.next1D());
        }
        tree.endFrame(0.7, 3.0);
    }
    KdOracle oracle{tree};
    Rng rng(48, 0);
    for (int i = 0; i < 10000; ++i) {
        Vec2 u = rng.next2D();
        Sample2D a = tree.sample(u);
        Sample2D b = oracle.sample(u);
        CHECK(std::abs(a.uv.x - b.uv.x) < 1e-6);
        CHECK(std::abs(a.uv.y - b.uv.y) < 1e-6);
        CHECK(std::abs(a.pdf - b.pdf) < 1e-6 * std::max(1.0, b.pdf));
        // returned pdf equals the pdf lookup at the sampled point
        CHECK(a.pdf == doctest::Approx(tree.pdf(a.uv)).epsilon(1e-12));
    }
}

TEST_CASE("kdtree: pdf lookups") {
    SphericalKdTree tree(8);
    SUBCASE("uniform tree is 1 everywhere") {
        Rng rng(49, 0);
        for (int i = 0; i < 100; ++i)
            CHECK(tree.pdf(rng.next2D()) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("boundary points tie-break to the lower child") {
        // root splits on u at 0.5: exactly 0.5 belongs to the left child
        tree.record(Vec2(0.25, 0.5), 8.0);
        tree.endFrame(1.0, 1e9);
        double left = tree.pdf(Vec2(0.49, 0.5));
        CHECK(tree.pdf(Vec2(0.5, 0.5)) == doctest::Approx(left).epsilon(1e-12));
    }
    SUBCASE("pdf integrates to one") {
        Rng seed(50, 0);
        for (int i = 0; i < 300; ++i)
            tree.record(seed.next2D(), seed.next1D());
        tree.endFrame(0.8, 2.5);
        const int steps = 256;
        double sum = 0.0;
        for (int i = 0; i < steps; ++i)
            for (int j = 0; j < steps; ++j)
                sum += tree.pdf({(i + 0.5) / steps, (j + 0.5) / steps});
        sum /= double(steps) * steps;
        CHECK(std::abs(sum - 1.0) < 1e-4);
    }
}

TEST_CASE("kdtree: record accumulates per leaf") {
    SphericalKdTree tree(4);
    tree.record(Vec2(0.1, 0.1), 1.0);
    tree.record(Vec2(0.1, 0.15), 2.0);
    tree.record(Vec2(0.9, 0.9), 1.0);
    tree.endFrame(1.0, 1e9);
    auto leaves = tree.leaves();
    double floorAdj = 1e-4 / 4.0;
    double total = 4.0;
    for (const auto &l : leaves) {
        if (l.lo.x < 0.25 && l.lo.y < 0.25)
            CHECK(l.prob == doctest::Approx(3.0 / total).epsilon(1e-3));
        (void)floorAdj;
    }
    CHECK(tree.leafProbabilitySum() == doctest::Approx(1.0).epsilon(1e-9));
    // negative contributions are rejected
    uint64_t before = tree.recordCount();
    tree.record(Vec2(0.5, 0.5), -1.0);
    CHECK(tree.recordCount() == before);
}

TEST_CASE("kdtree: hand-enumerated four-leaf split-collapse") {
    // uniform 4-leaf tree: root splits u, two children split v.
    // leaves (by construction order): LL, LR, RL, RR
    SUBCASE("0.85 hot leaf splits and the cold pair collapses") {
        SphericalKdTree tree(4);
        tree.record(Vec2(0.25, 0.25), 0.85); // leaf (u < .5, v < .5)
        tree.record(Vec2(0.25, 0.75), 0.05);
        tree.record(Vec2(0.75, 0.25), 0.05);
        tree.record(Vec2(0.75, 0.75), 0.05);
        tree.endFrame(1.0, 4.0); // p(lmax)=0.85 > 4 * 0.10 = 0.4: topology changes
        CHECK(tree.nodeCount() == 7);
        CHECK(tree.leafCount() == 4);
        CHECK(tree.checkInvariants());
        auto leaves = tree.leaves();
        // the right subtree collapsed into one leaf covering x in [0.5, 1]
        bool foundCollapsed = false, foundSplitChildren = false;
        int tiny = 0;
        for (const auto &l : leaves) {
            if (l.lo.x == 0.5 && l.hi.x == 1.0 && l.lo.y == 0.0 && l.hi.y == 1.0) {
                foundCollapsed = true;
                CHECK(l.prob == doctest::Approx(0.10).epsilon(2e-3));
            }
            if (l.hi.x <= 0.5 && l.hi.y <= 0.5) {
                // the hot quadrant was split in half; two children carry ~0.425
                if (l.prob > 0.4)
                    ++tiny;
                foundSplitChildren = true;
            }
        }
        CHECK(foundCollapsed);
        CHECK(foundSplitChildren);
        CHECK(tiny == 2);
    }
    SUBCASE("0.7 hot leaf does not clear the threshold") {
        SphericalKdTree tree(4);
        tree.record(Vec2(0.25, 0.25), 0.7);
        tree.record(Vec2(0.25, 0.75), 0.1);
        tree.record(Vec2(0.75, 0.25), 0.1);
        tree.record(Vec2(0.75, 0.75), 0.1);
        auto before = tree.serialize();
        tree.endFrame(1.0, 4.0); // 0.7 < 4 * 0.2: no topology change
        auto leaves = tree.leaves();
        CHECK(leaves.size() == 4);
        for (const auto &l : leaves) {
            double area = (l.hi.x - l.lo.x) * (l.hi.y - l.lo.y);
            CHECK(area == doctest::Approx(0.25).epsilon(1e-12)); // quadrants intact
        }
        (void)before;
    }
    SUBCASE("uniform probabilities never restructure") {
        SphericalKdTree tree(4);
        for (double u : {0.25, 0.75})
            for (double v : {0.25, 0.75})
                tree.record(Vec2(u, v), 1.0);
        tree.endFrame(1.0, 4.0);
        for (const auto &l : tree.leaves())
            CHECK(l.prob == doctest::Approx(0.25).epsilon(1e-6));
    }
}

TEST_CASE("kdtree: topology invariants under random end_frame sequences") {
    SphericalKdTree tree(32);
    Rng rng(51, 0);
    for (int round = 0; round < 300; ++round) {
        int records = int(rng.nextBounded(40));
        for (int i = 0; i < records; ++i)
            tree.record(rng.next2D(), rng.next1D() * 2.0);
        tree.endFrame(0.3 + 0.6 * rng.next1D(), 1.5 + 3.0 * rng.next1D());
        REQUIRE(tree.nodeCount() == 63);
        REQUIRE(tree.checkInvariants());
    }
}

TEST_CASE("kdtree: warped distribution matches the leaf probabilities") {
    SphericalKdTree tree(16);
    Rng seed(52, 0);
    for (int round = 0; round < 3; ++round) {
        for (int i = 0; i < 400; ++i) {
            Vec2 uv = seed.next2D();
            tree.record({uv.x, sqr(uv.y)}, seed.next1D());
        }
        tree.endFrame(0.8, 3.0);
    }
    auto leaves = tree.leaves();
    Rng rng(53, 0);
    const int n = 100000;
    std::vector<double> counts(leaves.size(), 0.0), expected(leaves.size(), 0.0);
    for (int i = 0; i < n; ++i) {
        Sample2D s = tree.sample(rng.next2D());
        for (size_t l = 0; l < leaves.size(); ++l) {
            if (s.uv.x >= leaves[l].lo.x && s.uv.x < leaves[l].hi.x && s.uv.y >= leaves[l].lo.y &&
                s.uv.y < leaves[l].hi.y) {
                counts[l] += 1.0;
                break;
            }
        }
    }
    for (size_t l = 0; l < leaves.size(); ++l)
        expected[l] = leaves[l].prob * n;
    CHECK(chiSquarePasses(chiSquareStatistic(counts, expected), int(leaves.size()) - 1));
}

TEST_CASE("kdtree: snapshot round trip") {
    SphericalKdTree tree(8);
    Rng rng(54, 0);
    for (int i = 0; i < 100; ++i)
        tree.record(rng.next2D(), rng.next1D());
    tree.endFrame(0.9, 2.0);
    auto bytes = tree.serialize();
    SphericalKdTree copy = SphericalKdTree::deserialize(bytes);
    CHECK(copy == tree);
}

// ---------------------------------------------------------------------------
// Gmm

namespace {

GmmConfig testGmmConfig(int c, double alpha = 0.7) {
    GmmConfig config;
    config.components = c;
    config.alphaEm = alpha;
    return config;
}

/// Direct transcription of the sufficient-statistics recurrence, kept
/// deliberately independent of the production code path.
struct SeqOracle {
    int comps;
    double alpha;
    std::vector<std::array<double, 8>> u;
    uint64_t i = 0;

    void step(const Gmm &mixture, const Vec2 &s, double w) {
        std::vector<double> gamma(comps);
        mixture.responsibilities(s, gamma);
        ++i;
        double ia = std::pow(double(i), -alpha);
        double a = 1.0 - ia;
        for (int c = 0; c < comps; ++c) {
            double b = ia * w * gamma[c];
            for (auto &e : u[c])
                e *= a;
            if (b > 0.0) {
                double v[8] = {1.0, s.x, s.y, s.x * s.x, s.y * s.y, s.x * s.y, 1.0 / gamma[c],
                               1.0 / b};
                for (int k = 0; k < 8; ++k)
                    u[c][k] += b * v[k];
            }
        }
    }
};

} // namespace

TEST_CASE("gmm: responsibilities") {
    SUBCASE("single component is always 1") {
        Gmm gmm(testGmmConfig(1));
        double gamma[1];
        gmm.responsibilities(Vec2(0.3, 0.8), {gamma, 1});
        CHECK(gamma[0] == 1.0);
    }
    SUBCASE("two identical components split evenly") {
        Gmm gmm(testGmmConfig(2));
        gmm.setComponent(0, 0.5, Vec2(0.5, 0.5), {0.01, 0.0, 0.01});
        gmm.setComponent(1, 0.5, Vec2(0.5, 0.5), {0.01, 0.0, 0.01});
        double gamma[2];
        gmm.responsibilities(Vec2(0.37, 0.61), {gamma, 2});
        CHECK(gamma[0] == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(gamma[1] == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("a sample at one mean with the other 10 sigma away") {
        Gmm gmm(testGmmConfig(2));
        gmm.setComponent(0, 0.5, Vec2(0.2, 0.2), {1e-4, 0.0, 1e-4}); // sigma 0.01
        gmm.setComponent(1, 0.5, Vec2(0.2 + 0.1, 0.2), {1e-4, 0.0, 1e-4});
        double gamma[2];
        gmm.responsibilities(Vec2(0.2, 0.2), {gamma, 2});
        CHECK(gamma[0] > 1.0 - 1e-6);
        CHECK(gamma[1] < 1e-6);
    }
    SUBCASE("underflow falls back to uniform responsibilities") {
        Gmm gmm(testGmmConfig(2));
        gmm.setComponent(0, 0.5, Vec2(0.1, 0.1), {1e-6, 0.0, 1e-6});
        gmm.setComponent(1, 0.5, Vec2(0.1, 0.1), {1e-6, 0.0, 1e-6});
        double gamma[2];
        uint64_t before = gmm.underflowCount();
        gmm.responsibilities(Vec2(0.9, 0.9), {gamma, 2}); // hundreds of sigma away
        CHECK(gamma[0] == doctest::Approx(0.5));
        CHECK(gmm.underflowCount() == before + 1);
    }
}

TEST_CASE("gmm: first sequential step ignores prior statistics when alpha = 1") {
    Gmm gmm(testGmmConfig(2, 1.0));
    gmm.setStats(0, {9, 9, 9, 9, 9, 9, 9, 9});
    gmm.setStats(1, {7, 7, 7, 7, 7, 7, 7, 7});
    gmm.estepSequential(Vec2(0.4, 0.6), 1.5);
    // a_1 = 1 - 1^-1 = 0: the previous statistics vanish entirely
    for (int c = 0; c < 2; ++c) {
        double gamma[2];
        // the responsibilities changed state? no: estep does not move params
        (void)gamma;
        CHECK(gmm.stats(c)[0] < 9.0);
        CHECK(gmm.stats(c)[7] == doctest::Approx(1.0).epsilon(1e-12)); // b * (1/b)
    }
}

TEST_CASE("gmm: zero-weight samples only decay the statistics") {
    Gmm gmm(testGmmConfig(2));
    gmm.estepSequential(Vec2(0.4, 0.6), 1.0);
    auto before0 = gmm.stats(0);
    auto before1 = gmm.stats(1);
    gmm.estepSequential(Vec2(0.9, 0.1), 0.0);
    double a = 1.0 - std::pow(2.0, -0.7);
    for (int k = 0; k < 8; ++k) {
        CHECK(gmm.stats(0)[k] == doctest::Approx(before0[k] * a).epsilon(1e-12));
        CHECK(gmm.stats(1)[k] == doctest::Approx(before1[k] * a).epsilon(1e-12));
    }
}

TEST_CASE("gmm: ten sequential steps match the independent oracle to 1e-12") {
    Gmm gmm(testGmmConfig(3));
    SeqOracle oracle{3, 0.7, std::vector<std::array<double, 8>>(3), 0};
    Rng rng(55, 0);
    for (int i = 0; i < 10; ++i) {
        Vec2 s = rng.next2D();
        double w = rng.next1D();
        oracle.step(gmm, s, w); // oracle reads gamma before the state advances
        gmm.estepSequential(s, w);
    }
    for (int c = 0; c < 3; ++c)
        for (int k = 0; k < 8; ++k)
            CHECK(gmm.stats(c)[k] == doctest::Approx(oracle.u[c][k]).epsilon(1e-12));
}

TEST_CASE("gmm: batch E-step equals folding the sequential recurrence") {
    SUBCASE("a single sample is exactly one sequential step") {
        Gmm a(testGmmConfig(4)), b(testGmmConfig(4));
        std::vector<std::pair<Vec2, double>> batch{{Vec2(0.3, 0.7), 0.8}};
        a.estepBatch(batch);
        b.estepSequential(Vec2(0.3, 0.7), 0.8);
        for (int c = 0; c < 4; ++c)
            for (int k = 0; k < 8; ++k)
                CHECK(a.stats(c)[k] == doctest::Approx(b.stats(c)[k]).epsilon(1e-12));
        CHECK(a.sampleIndex() == b.sampleIndex());
    }
    SUBCASE("all-zero weights decay identically") {
        Gmm a(testGmmConfig(2)), b(testGmmConfig(2));
        a.estepSequential(Vec2(0.5, 0.5), 1.0);
        b.estepSequential(Vec2(0.5, 0.5), 1.0);
        std::vector<std::pair<Vec2, double>> batch{{Vec2(0.1, 0.1), 0.0}, {Vec2(0.9, 0.9), 0.0}};
        a.estepBatch(batch);
        for (auto &[s, w] : batch)
            b.estepSequential(s, w);
        for (int c = 0; c < 2; ++c)
            for (int k = 0; k < 8; ++k)
                CHECK(a.stats(c)[k] == doctest::Approx(b.stats(c)[k]).epsilon(1e-10));
    }
    SUBCASE("randomized equivalence across lengths and step exponents") {
        Rng rng(56, 0);
        for (double alpha : {0.6, 0.7, 1.0}) {
            for (int len : {1, 2, 3, 5, 17, 64, 256}) {
                Gmm a(testGmmConfig(4, alpha)), b(testGmmConfig(4, alpha));
                std::vector<std::pair<Vec2, double>> batch;
                for (int i = 0; i < len; ++i)
                    batch.emplace_back(rng.next2D(), rng.next1D() * 2.0);
                a.estepBatch(batch);
                for (auto &[s, w] : batch)
                    b.estepSequential(s, w);
                for (int c = 0; c < 4; ++c) {
                    for (int k = 0; k < 8; ++k) {
                        double ref = b.stats(c)[k];
                        double tol = std::max(std::abs(ref), 1e-30) * 1e-9;
                        CHECK(std::abs(a.stats(c)[k] - ref) <= tol);
                    }
                }
            }
        }
    }
    SUBCASE("empty batch is a no-op") {
        Gmm a(testGmmConfig(2));
        a.estepSequential(Vec2(0.2, 0.2), 1.0);
        auto before = a.stats(0);
        a.estepBatch({});
        CHECK(a.stats(0) == before);
    }
}

TEST_CASE("gmm: M-step recovers known generators") {
    SUBCASE("single isotropic Gaussian") {
        GmmConfig config = testGmmConfig(1);
        Gmm gmm(config);
        std::mt19937 gen(123);
        std::normal_distribution<double> nx(0.45, 0.08), ny(0.55, 0.08);
        std::vector<std::pair<Vec2, double>> batch;
        for (int i = 0; i < 10000; ++i)
            batch.emplace_back(Vec2(clamp(nx(gen), 0.0, 1.0), clamp(ny(gen), 0.0, 1.0)), 1.0);
        gmm.estepBatch(batch);
        gmm.mstep();
        CHECK(std::abs(gmm.mean(0).x - 0.45) < 0.01);
        CHECK(std::abs(gmm.mean(0).y - 0.55) < 0.01);
        CHECK(std::abs(gmm.covariance(0)[0] - 0.0064) / 0.0064 < 0.05);
        CHECK(std::abs(gmm.covariance(0)[2] - 0.0064) / 0.0064 < 0.05);
    }
    SUBCASE("two symmetric clusters get even weights") {
        Gmm gmm(testGmmConfig(2));
        gmm.setComponent(0, 0.5, Vec2(0.25, 0.5), {0.01, 0.0, 0.01});
        gmm.setComponent(1, 0.5, Vec2(0.75, 0.5), {0.01, 0.0, 0.01});
        std::mt19937 gen(321);
        std::normal_distribution<double> noise(0.0, 0.05);
        std::vector<std::pair<Vec2, double>> batch;
        for (int i = 0; i < 20000; ++i) {
            double cx = (i % 2 == 0) ? 0.25 : 0.75;
            batch.emplace_back(
                Vec2(clamp(cx + noise(gen), 0.0, 1.0), clamp(0.5 + noise(gen), 0.0, 1.0)), 1.0);
        }
        gmm.estepBatch(batch);
        gmm.mstep();
        CHECK(std::abs(gmm.weight(0) - 0.5) < 0.05);
        CHECK(std::abs(gmm.weight(1) - 0.5) < 0.05);
    }
    SUBCASE("degenerate identical samples clamp to the variance floor") {
        GmmConfig config = testGmmConfig(1);
        Gmm gmm(config);
        std::vector<std::pair<Vec2, double>> batch(500, {Vec2(0.5, 0.5), 1.0});
        gmm.estepBatch(batch);
        gmm.mstep();
        CHECK(gmm.covariance(0)[0] == doctest::Approx(config.sigmaMinSq).epsilon(1e-9));
        CHECK(gmm.covariance(0)[2] == doctest::Approx(config.sigmaMinSq).epsilon(1e-9));
    }
    SUBCASE("all-zero statistics leave the model unchanged") {
        Gmm gmm(testGmmConfig(2));
        Vec2 m0 = gmm.mean(0);
        gmm.mstep();
        CHECK(gmm.mean(0) == m0);
    }
}

TEST_CASE("gmm: pdf and sampling") {
    SUBCASE("tight component keeps 99 percent of samples inside 3 sigma") {
        Gmm gmm(testGmmConfig(1));
        gmm.setComponent(0, 1.0, Vec2(0.5, 0.5), {1e-4, 0.0, 1e-4}); // sigma 0.01
        Rng rng(57, 0);
        int inside = 0;
        const int n = 20000;
        for (int i = 0; i < n; ++i) {
            Sample2D s = gmm.sample(rng.next1D(), rng.next2D());
            if (length(Vec3(s.uv.x - 0.5, s.uv.y - 0.5, 0.0)) < 0.03 * std::sqrt(2.0))
                ++inside;
        }
        CHECK(double(inside) / n >= 0.99);
    }
    SUBCASE("two equal components are selected evenly") {
        Gmm gmm(testGmmConfig(2));
        gmm.setComponent(0, 0.5, Vec2(0.2, 0.2), {1e-4, 0.0, 1e-4});
        gmm.setComponent(1, 0.5, Vec2(0.8, 0.8), {1e-4, 0.0, 1e-4});
        Rng rng(58, 0);
        const int n = 100000;
        int first = 0;
        for (int i = 0; i < n; ++i) {
            Sample2D s = gmm.sample(rng.next1D(), rng.next2D());
            if (s.uv.x < 0.5)
                ++first;
        }
        double sigma = std::sqrt(0.25 / n);
        CHECK(std::abs(double(first) / n - 0.5) < 3.0 * sigma);
    }
    SUBCASE("pdf integrates to one over the square") {
        Gmm gmm(testGmmConfig(3));
        gmm.setComponent(0, 0.5, Vec2(0.3, 0.4), {0.02, 0.005, 0.01});
        gmm.setComponent(1, 0.3, Vec2(0.8, 0.2), {0.01, -0.002, 0.02});
        gmm.setComponent(2, 0.2, Vec2(0.1, 0.9), {0.015, 0.0, 0.015});
        const int steps = 512;
        double sum = 0.0;
        for (int i = 0; i < steps; ++i)
            for (int j = 0; j < steps; ++j)
                sum += gmm.pdf({(i + 0.5) / steps, (j + 0.5) / steps});
        sum /= double(steps) * steps;
        CHECK(std::abs(sum - 1.0) < 1e-3);
    }
    SUBCASE("sample pdf agrees with the pdf lookup") {
        Gmm gmm(testGmmConfig(2));
        gmm.setComponent(0, 0.6, Vec2(0.4, 0.6), {0.01, 0.0, 0.02});
        gmm.setComponent(1, 0.4, Vec2(0.7, 0.3), {0.02, 0.004, 0.01});
        Rng rng(59, 0);
        for (int i = 0; i < 200; ++i) {
            Sample2D s = gmm.sample(rng.next1D(), rng.next2D());
            CHECK(s.pdf == doctest::Approx(gmm.pdf(s.uv)).epsilon(1e-12));
        }
    }
}

TEST_CASE("gmm: snapshot round trip") {
    Gmm gmm(testGmmConfig(3));
    Rng rng(60, 0);
    for (int i = 0; i < 50; ++i)
        gmm.estepSequential(rng.next2D(), rng.next1D());
    gmm.mstep();
    Gmm copy = Gmm::deserialize(gmm.serialize());
    CHECK(copy == gmm);
}

TEST_CASE("models: the three kinds expose one contract") {
    for (ModelKind kind : {ModelKind::Grid, ModelKind::KdTree, ModelKind::Gmm}) {
        ModelConfig config;
        config.kind = kind;
        DirectionalModel model(config);
        Rng rng(61, uint64_t(kind));
        for (int f = 0; f < 4; ++f) {
            for (int i = 0; i < 200; ++i) {
                Vec2 uv = rng.next2D();
                model.record({0.25 + 0.5 * uv.x * uv.x, uv.y}, 0.1 + rng.next1D());
            }
            model.endFrame(0.5);
        }
        CHECK(model.recordCount() == 800);
        // pdf is a density over the square
        const int steps = 128;
        double sum = 0.0;
        for (int i = 0; i < steps; ++i)
            for (int j = 0; j < steps; ++j)
                sum += model.pdf({(i + 0.5) / steps, (j + 0.5) / steps});
        sum /= double(steps) * steps;
        CHECK(std::abs(sum - 1.0) < 0.02);
        // sampling respects the pdf
        for (int i = 0; i < 100; ++i) {
            Sample2D s = model.sample(rng);
            CHECK(s.uv.x >= 0.0);
            CHECK(s.uv.x <= 1.0);
            CHECK(s.pdf == doctest::Approx(model.pdf(s.uv)).epsilon(1e-9));
        }
    }
}
