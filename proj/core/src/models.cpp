// pstf is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include "pstf/models.h"

#include <algorithm>
#include <cassert>
#include <cstring>
#include <stdexcept>

namespace pstf {

// ---------------------------------------------------------------------------
// DirGrid

DirGrid::DirGrid(int resolution) : m_res(resolution) {
    if (resolution < 1)
        throw std::invalid_argument("DirGrid: resolution must be >= 1");
    m_weights.assign(size_t(m_res) * m_res, 1.0 / (double(m_res) * m_res));
    m_accum.assign(size_t(m_res) * m_res, 0.0);
    m_total = 1.0;
}

int DirGrid::cellIndex(const Vec2 &uv) const {
    int ix = std::min(int(uv.x * m_res), m_res - 1);
    int iy = std::min(int(uv.y * m_res), m_res - 1);
    return iy * m_res + ix;
}

void DirGrid::record(const Vec2 &uv, double contribution) {
    if (!(contribution >= 0.0) || !std::isfinite(contribution))
        return;
    m_accum[cellIndex(uv)] += contribution;
    ++m_recordCount;
}

void DirGrid::endFrame(double blend, double) {
    double sum = 0.0;
    for (double a : m_accum)
        sum += a;
    if (sum > 0.0) {
        for (size_t i = 0; i < m_weights.size(); ++i)
            m_weights[i] = (1.0 - blend) * m_weights[i] + blend * (m_accum[i] / sum);
        m_total = 0.0;
        for (double w : m_weights)
            m_total += w;
    }
    std::fill(m_accum.begin(), m_accum.end(), 0.0);
}

double DirGrid::pdf(const Vec2 &uv) const {
    if (m_total <= 0.0)
        return 1.0; // uniform fallback
    return m_weights[cellIndex(uv)] / m_total * double(m_res) * m_res;
}

Sample2D DirGrid::sample(const Vec2 &u) const {
    Sample2D s;
    if (m_total <= 0.0) {
        s.uv = u;
        s.pdf = 1.0;
        return s;
    }
    // row marginal then column, remapping the residuals to the cell interior
    double target = u.y * m_total;
    int row = 0;
    double rowSum = 0.0, acc = 0.0;
    for (; row < m_res; ++row) {
        rowSum = 0.0;
        for (int x = 0; x < m_res; ++x)
            rowSum += m_weights[size_t(row) * m_res + x];
        if (acc + rowSum > target || row == m_res - 1)
            break;
        acc += rowSum;
    }
    double vInCell = rowSum > 0.0 ? clamp((target - acc) / rowSum, 0.0, 1.0) : u.y;

    double colTarget = u.x * rowSum;
    int col = 0;
    double colAcc = 0.0, w = 0.0;
    for (; col < m_res; ++col) {
        w = m_weights[size_t(row) * m_res + col];
        if (colAcc + w > colTarget || col == m_res - 1)
            break;
        colAcc += w;
    }
    double uInCell = w > 0.0 ? clamp((colTarget - colAcc) / w, 0.0, 1.0) : u.x;

    s.uv = {(col + uInCell) / m_res, (row + vInCell) / m_res};
    s.uv.x = std::min(s.uv.x, std::nexttoward(1.0, 0.0));
    s.uv.y = std::min(s.uv.y, std::nexttoward(1.0, 0.0));
    s.pdf = pdf(s.uv);
    return s;
}

// ---------------------------------------------------------------------------
// SphericalKdTree

SphericalKdTree::SphericalKdTree(int leafCount) : m_leafCount(leafCount) {
    if (leafCount < 2 || (leafCount & (leafCount - 1)) != 0)
        throw std::invalid_argument("SphericalKdTree: leaf count must be a power of two >= 2");
    m_nodes.reserve(size_t(2 * leafCount - 1));
    m_nodes.emplace_back();
    buildUniform(0, 0, leafCount);
    refreshMass(m_root);
    assert(int(m_nodes.size()) == 2 * leafCount - 1);
}

void SphericalKdTree::buildUniform(int node, int depth, int leavesBelow) {
    if (leavesBelow == 1) {
        m_nodes[node].leaf = true;
        m_nodes[node].prob = 1.0 / m_leafCount;
        return;
    }
    int left = int(m_nodes.size());
    m_nodes.emplace_back();
    int right = int(m_nodes.size());
    m_nodes.emplace_back();
    m_nodes[node].leaf = false;
    m_nodes[node].axis = uint8_t(depth & 1);
    m_nodes[node].split = 0.5;
    m_nodes[node].left = left;
    m_nodes[node].right = right;
    m_nodes[left].parent = node;
    m_nodes[right].parent = node;
    buildUniform(left, depth + 1, leavesBelow / 2);
    buildUniform(right, depth + 1, leavesBelow / 2);
}

void SphericalKdTree::refreshMass(int node) {
    Node &n = m_nodes[node];
    if (n.leaf) {
        n.mass = n.prob;
        return;
    }
    refreshMass(n.left);
    refreshMass(n.right);
    n.mass = m_nodes[n.left].mass + m_nodes[n.right].mass;
}

int SphericalKdTree::findLeaf(const Vec2 &uv, Vec2 &lo, Vec2 &hi) const {
    lo = {0.0, 0.0};
    hi = {1.0, 1.0};
    int node = m_root;
    while (!m_nodes[node].leaf) {
        const Node &n = m_nodes[node];
        double splitAbs = n.axis == 0 ? lerp(lo.x, hi.x, n.split) : lerp(lo.y, hi.y, n.split);
        double coord = n.axis == 0 ? uv.x : uv.y;
        if (coord <= splitAbs) { // boundary ties go to the lower child
            (n.axis == 0 ? hi.x : hi.y) = splitAbs;
            node = n.left;
        } else {
            (n.axis == 0 ? lo.x : lo.y) = splitAbs;
            node = n.right;
        }
    }
    return node;
}

void SphericalKdTree::record(const Vec2 &uv, double contribution) {
    if (!(contribution >= 0.0) || !std::isfinite(contribution))
        return;
    Vec2 lo, hi;
    m_nodes[findLeaf(uv, lo, hi)].accum += contribution;
    ++m_recordCount;
}

double SphericalKdTree::pdf(const Vec2 &uv) const {
    Vec2 lo, hi;
    int leaf = findLeaf(uv, lo, hi);
    double area = (hi.x - lo.x) * (hi.y - lo.y);
    return area > 0.0 ? m_nodes[leaf].prob / area : 0.0;
}

Sample2D SphericalKdTree::sample(const Vec2 &u) const {
    Vec2 residual = u;
    Vec2 lo{0.0, 0.0}, hi{1.0, 1.0};
    int node = m_root;
    while (!m_nodes[node].leaf) {
        const Node &n = m_nodes[node];
        double mass = n.mass;
        double leftFrac = mass > 0.0 ? m_nodes[n.left].mass / mass : 0.5;
        double &coord = n.axis == 0 ? residual.x : residual.y;
        double splitAbs = n.axis == 0 ? lerp(lo.x, hi.x, n.split) : lerp(lo.y, hi.y, n.split);
        if (leftFrac > 0.0 && (coord < leftFrac || leftFrac >= 1.0)) {
            coord = std::min(coord / leftFrac, std::nexttoward(1.0, 0.0));
            (n.axis == 0 ? hi.x : hi.y) = splitAbs;
            node = n.left;
        } else {
            coord = std::min((coord - leftFrac) / (1.0 - leftFrac), std::nexttoward(1.0, 0.0));
            (n.axis == 0 ? lo.x : lo.y) = splitAbs;
            node = n.right;
        }
    }
    Sample2D s;
    s.uv = {lerp(lo.x, hi.x, residual.x), lerp(lo.y, hi.y, residual.y)};
    double area = (hi.x - lo.x) * (hi.y - lo.y);
    s.pdf = area > 0.0 ? m_nodes[node].prob / area : 0.0;
    return s;
}

void SphericalKdTree::endFrame(double blend, double tSplit) {
    if (tSplit <= 1.0)
        throw std::invalid_argument("SphericalKdTree::endFrame: tSplit must be > 1");

    double total = 0.0;
    for (const Node &n : m_nodes)
        if (n.leaf)
            total += n.accum;

    if (total > 0.0) {
        const double floorProb = 1e-4 / m_leafCount;
        double normSum = 0.0;
        for (Node &n : m_nodes)
            if (n.leaf)
                normSum += std::max(n.accum / total, floorProb);
        for (Node &n : m_nodes) {
            if (!n.leaf)
                continue;
            double target = std::max(n.accum / total, floorProb) / normSum;
            n.prob = (1.0 - blend) * n.prob + blend * target;
        }
        double probSum = 0.0;
        for (const Node &n : m_nodes)
            if (n.leaf)
                probSum += n.prob;
        for (Node &n : m_nodes)
            if (n.leaf)
                n.prob /= probSum;
    }

    // split-collapse: move refinement from the coldest leaf pair to the
    // hottest leaf while keeping the node count at 2L-1
    int lMax = -1;
    double pMax = -1.0;
    for (int i = 0; i < int(m_nodes.size()); ++i) {
        if (m_nodes[i].leaf && m_nodes[i].prob > pMax) {
            pMax = m_nodes[i].prob;
            lMax = i;
        }
    }
    int pMin = -1;
    double pMinMass = 2.0;
    for (int i = 0; i < int(m_nodes.size()); ++i) {
        const Node &n = m_nodes[i];
        if (n.leaf || !m_nodes[n.left].leaf || !m_nodes[n.right].leaf)
            continue;
        double mass = m_nodes[n.left].prob + m_nodes[n.right].prob;
        if (mass < pMinMass) {
            pMinMass = mass;
            pMin = i;
        }
    }

    if (lMax >= 0 && pMin >= 0 && m_nodes[lMax].parent != pMin && pMax > tSplit * pMinMass) {
        int freedLeft = m_nodes[pMin].left;
        int freedRight = m_nodes[pMin].right;

        Node &collapsed = m_nodes[pMin];
        collapsed.leaf = true;
        collapsed.prob = pMinMass;
        collapsed.accum = 0.0;
        collapsed.left = collapsed.right = -1;

        // determine the hot leaf's rectangle to pick the longer axis
        Vec2 lo{0.0, 0.0}, hi{1.0, 1.0};
        std::vector<int> chain;
        for (int n = lMax; n != -1; n = m_nodes[n].parent)
            chain.push_back(n);
        for (size_t i = chain.size(); i-- > 1;) {
            const Node &n = m_nodes[chain[i]];
            double splitAbs = n.axis == 0 ? lerp(lo.x, hi.x, n.split) : lerp(lo.y, hi.y, n.split);
            if (chain[i - 1] == n.left)
                (n.axis == 0 ? hi.x : hi.y) = splitAbs;
            else
                (n.axis == 0 ? lo.x : lo.y) = splitAbs;
        }

        Node &hot = m_nodes[lMax];
        hot.leaf = false;
        hot.axis = (hi.x - lo.x) >= (hi.y - lo.y) ? 0 : 1;
        hot.split = 0.5; // midpoint of the longer axis
        hot.left = freedLeft;
        hot.right = freedRight;
        for (int child : {freedLeft, freedRight}) {
            Node &c = m_nodes[child];
            c = Node();
            c.leaf = true;
            c.prob = pMax * 0.5;
            c.parent = lMax;
        }
        hot.prob = 0.0;
    }

    for (Node &n : m_nodes)
        n.accum = 0.0;
    refreshMass(m_root);
}

std::vector<SphericalKdTree::LeafInfo> SphericalKdTree::leaves() const {
    std::vector<LeafInfo> out;
    struct Frame {
        int node;
        Vec2 lo, hi;
    };
    std::vector<Frame> stack{{m_root, {0.0, 0.0}, {1.0, 1.0}}};
    while (!stack.empty()) {
        Frame f = stack.back();
        stack.pop_back();
        const Node &n = m_nodes[f.node];
        if (n.leaf) {
            out.push_back({f.lo, f.hi, n.prob, f.node});
            continue;
        }
        double splitAbs =
            n.axis == 0 ? lerp(f.lo.x, f.hi.x, n.split) : lerp(f.lo.y, f.hi.y, n.split);
        Frame left = f, right = f;
        (n.axis == 0 ? left.hi.x : left.hi.y) = splitAbs;
        (n.axis == 0 ? right.lo.x : right.lo.y) = splitAbs;
        left.node = n.left;
        right.node = n.right;
        stack.push_back(left);
        stack.push_back(right);
    }
    return out;
}

double SphericalKdTree::leafProbabilitySum() const {
    double sum = 0.0;
    for (const Node &n : m_nodes)
        if (n.leaf)
            sum += n.prob;
    return sum;
}

bool SphericalKdTree::checkInvariants(double tol) const {
    if (int(m_nodes.size()) != 2 * m_leafCount - 1)
        return false;
    auto ls = leaves();
    if (int(ls.size()) != m_leafCount)
        return false;
    double probSum = 0.0, areaSum = 0.0;
    for (const LeafInfo &l : ls) {
        if (l.prob < 0.0)
            return false;
        probSum += l.prob;
        areaSum += (l.hi.x - l.lo.x) * (l.hi.y - l.lo.y);
    }
    return std::abs(probSum - 1.0) < tol + 1e-6 && std::abs(areaSum - 1.0) < tol + 1e-6;
}

std::vector<uint8_t> SphericalKdTree::serialize() const {
    std::vector<uint8_t> bytes;
    auto put = [&bytes](const void *p, size_t n) {
        const uint8_t *b = static_cast<const uint8_t *>(p);
        bytes.insert(bytes.end(), b, b + n);
    };
    const char magic[8] = {'P', 'S', 'T', 'F', 'K', 'D', 'T', '1'};
    put(magic, sizeof(magic));
    int32_t leafCount = m_leafCount;
    put(&leafCount, sizeof(leafCount));
    for (const Node &n : m_nodes) {
        uint8_t leaf = n.leaf ? 1 : 0;
        put(&leaf, 1);
        put(&n.axis, 1);
        put(&n.split, sizeof(n.split));
        put(&n.left, sizeof(n.left));
        put(&n.right, sizeof(n.right));
        put(&n.parent, sizeof(n.parent));
        put(&n.prob, sizeof(n.prob));
    }
    return bytes;
}

SphericalKdTree SphericalKdTree::deserialize(std::span<const uint8_t> bytes) {
    size_t pos = 0;
    auto get = [&](void *p, size_t n) {
        if (pos + n > bytes.size())
            throw std::runtime_error("kd-tree snapshot truncated");
        std::memcpy(p, bytes.data() + pos, n);
        pos += n;
    };
    char magic[8];
    get(magic, sizeof(magic));
    if (std::memcmp(magic, "PSTFKDT1", 8) != 0)
        throw std::runtime_error("not a kd-tree snapshot");
    int32_t leafCount = 0;
    get(&leafCount, sizeof(leafCount));
    SphericalKdTree tree(leafCount);
    for (Node &n : tree.m_nodes) {
        uint8_t leaf = 0;
        get(&leaf, 1);
        n.leaf = leaf != 0;
        get(&n.axis, 1);
        get(&n.split, sizeof(n.split));
        get(&n.left, sizeof(n.left));
        get(&n.right, sizeof(n.right));
        get(&n.parent, sizeof(n.parent));
        get(&n.prob, sizeof(n.prob));
        n.accum = 0.0;
    }
    tree.refreshMass(tree.m_root);
    return tree;
}

bool SphericalKdTree::operator==(const SphericalKdTree &o) const {
    if (m_leafCount != o.m_leafCount || m_nodes.size() != o.m_nodes.size())
        return false;
    for (size_t i = 0; i < m_nodes.size(); ++i) {
        const Node &a = m_nodes[i], &b = o.m_nodes[i];
        if (a.leaf != b.leaf || a.axis != b.axis || a.split != b.split || a.left != b.left ||
            a.right != b.right || a.parent != b.parent || a.prob != b.prob)
            return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Gmm

Gmm::Gmm(const GmmConfig &config) : m_config(config) {
    int c = m_config.components;
    if (c < 1)
        throw std::invalid_argument("Gmm: needs at least one component");
    if (!(m_config.alphaEm > 0.5 && m_config.alphaEm <= 1.0))
        throw std::invalid_argument("Gmm: alphaEm must lie in (0.5, 1]");
    m_weights.assign(c, 1.0 / c);
    m_means.resize(c);
    m_cov.assign(c, {0.02, 0.0, 0.02});
    m_u.assign(c, {});
    // spread the initial means over the square
    int grid = 1;
    while (grid * grid < c)
        ++grid;
    for (int i = 0; i < c; ++i) {
        int gx = i % grid, gy = i / grid;
        m_means[i] = {(gx + 0.5) / grid, (gy + 0.5) / grid};
    }
    rebuildCache();
}

void Gmm::setComponent(int c, double weight, const Vec2 &mean, const std::array<double, 3> &cov) {
    m_weights[c] = weight;
    m_means[c] = mean;
    m_cov[c] = cov;
    rebuildCache();
}

void Gmm::rebuildCache() {
    m_cache.resize(m_weights.size());
    for (size_t c = 0; c < m_weights.size(); ++c) {
        double a = m_cov[c][0], b = m_cov[c][1], d = m_cov[c][2];
        double det = a * d - b * b;
        Cache &cache = m_cache[c];
        cache.inv[0] = d / det;
        cache.inv[1] = -b / det;
        cache.inv[2] = a / det;
        cache.norm = 1.0 / (kTwoPi * std::sqrt(det));
        cache.chol[0] = std::sqrt(a);
        cache.chol[1] = b / cache.chol[0];
        cache.chol[2] = std::sqrt(std::max(d - cache.chol[1] * cache.chol[1], 0.0));
    }
}

double Gmm::componentPdf(int c, const Vec2 &uv) const {
    // wrapped Gaussian: sum over the 3x3 torus replicas (accurate for the
    // sigmaMax cap enforced by mstep)
    const Cache &cache = m_cache[c];
    double sum = 0.0;
    for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
            double ex = uv.x + dx - m_means[c].x;
            double ey = uv.y + dy - m_means[c].y;
            double q = cache.inv[0] * ex * ex + 2.0 * cache.inv[1] * ex * ey +
                       cache.inv[2] * ey * ey;
            sum += cache.norm * std::exp(-0.5 * q);
        }
    }
    return sum;
}

void Gmm::responsibilities(const Vec2 &s, std::span<double> gamma) const {
    int c = m_config.components;
    double total = 0.0;
    for (int i = 0; i < c; ++i) {
        gamma[i] = m_weights[i] * componentPdf(i, s);
        total += gamma[i];
    }
    if (total <= 0.0 || !std::isfinite(total)) {
        ++m_underflows;
        for (int i = 0; i < c; ++i)
            gamma[i] = 1.0 / c;
        return;
    }
    for (int i = 0; i < c; ++i)
        gamma[i] /= total;
}

void Gmm::estepSequential(const Vec2 &s, double w) {
    int comps = m_config.components;
    std::vector<double> gamma(comps);
    responsibilities(s, gamma);

    ++m_i;
    double stepScale = std::pow(double(m_i), -m_config.alphaEm);
    double a = 1.0 - stepScale;
    for (int c = 0; c < comps; ++c) {
        double b = stepScale * w * gamma[c];
        std::array<double, 8> &u = m_u[c];
        for (double &entry : u)
            entry *= a;
        if (b > 0.0) {
            u[0] += b;
            u[1] += b * s.x;
            u[2] += b * s.y;
            u[3] += b * s.x * s.x;
            u[4] += b * s.y * s.y;
            u[5] += b * s.x * s.y;
            u[6] += b / gamma[c]; // = stepScale * w
            u[7] += b * (1.0 / b);
        }
    }
}

void Gmm::estepBatch(std::span<const std::pair<Vec2, double>> samples) {
    if (samples.empty())
        return;
    int comps = m_config.components;
    size_t n = samples.size();
    uint64_t i0 = m_i;

    // responsibilities frozen at the pre-batch mixture
    std::vector<double> gamma(n * comps);
    for (size_t j = 0; j < n; ++j)
        responsibilities(samples[j].first, {gamma.data() + j * comps, size_t(comps)});

    // log g(j) via prefix sums of log(1 - k^-alpha); k = 1 contributes a zero
    // factor that annihilates everything before it
    std::vector<double> logPrefix(n + 1, 0.0);
    size_t lastZero = 0; // index j such that factor a_{i0+j} == 0
    for (size_t k = 1; k <= n; ++k) {
        double factor = 1.0 - std::pow(double(i0 + k), -m_config.alphaEm);
        if (factor <= 0.0) {
            lastZero = k;
            logPrefix[k] = 0.0; // restart the running sum past the zero
        } else {
            logPrefix[k] = logPrefix[k - 1] + std::log(factor);
        }
    }
    auto gOf = [&](size_t j) { // product of factors for indices (j, n]
        if (j < lastZero)
            return 0.0;
        return std::exp(logPrefix[n] - logPrefix[j]);
    };

    double gTotal = gOf(0); // decay applied to the pre-batch statistics
    for (int c = 0; c < comps; ++c)
        for (double &entry : m_u[c])
            entry *= gTotal;

    for (size_t j = 1; j <= n; ++j) {
        const Vec2 &s = samples[j - 1].first;
        double w = samples[j - 1].second;
        double g = gOf(j);
        if (g == 0.0)
            continue;
        double stepScale = std::pow(double(i0 + j), -m_config.alphaEm);
        for (int c = 0; c < comps; ++c) {
            double b = stepScale * w * gamma[(j - 1) * comps + c];
            if (b <= 0.0)
                continue;
            double bg = b * g;
            std::array<double, 8> &u = m_u[c];
            u[0] += bg;
            u[1] += bg * s.x;
            u[2] += bg * s.y;
            u[3] += bg * s.x * s.x;
            u[4] += bg * s.y * s.y;
            u[5] += bg * s.x * s.y;
            u[6] += g * stepScale * w;
            u[7] += g;
        }
    }
    m_i += n;
}

void Gmm::mstep() {
    int comps = m_config.components;
    double total = 0.0;
    for (int c = 0; c < comps; ++c)
        total += m_u[c][0];
    if (total <= 0.0)
        return; // no information yet

    // locate the heaviest component for reseeding degenerate ones
    int heaviest = 0;
    for (int c = 1; c < comps; ++c)
        if (m_u[c][0] > m_u[heaviest][0])
            heaviest = c;

    for (int c = 0; c < comps; ++c) {
        double mass = m_u[c][0];
        if (mass <= m_config.reseedFraction * total) {
            Vec2 seed = {m_u[heaviest][1] / m_u[heaviest][0], m_u[heaviest][2] / m_u[heaviest][0]};
            double jitter = 0.05 * (1.0 + (m_reseedCounter++ % 7));
            m_means[c] = {seed.x + jitter * 0.01, seed.y - jitter * 0.01};
            m_means[c].x -= std::floor(m_means[c].x);
            m_means[c].y -= std::floor(m_means[c].y);
            m_weights[c] = 1e-3;
            m_cov[c] = {0.01, 0.0, 0.01};
            continue;
        }
        m_weights[c] = mass / total;
        Vec2 mean = {m_u[c][1] / mass, m_u[c][2] / mass};
        double exx = m_u[c][3] / mass;
        double eyy = m_u[c][4] / mass;
        double exy = m_u[c][5] / mass;
        double cxx = exx - mean.x * mean.x;
        double cyy = eyy - mean.y * mean.y;
        double cxy = exy - mean.x * mean.y;

        // clamp the eigenvalues of the symmetric 2x2 covariance
        double tr = cxx + cyy;
        double diff = cxx - cyy;
        double disc = std::sqrt(std::max(diff * diff + 4.0 * cxy * cxy, 0.0));
        double l1 = 0.5 * (tr + disc);
        double l2 = 0.5 * (tr - disc);
        double c1 = clamp(l1, m_config.sigmaMinSq, m_config.sigmaMaxSq);
        double c2 = clamp(l2, m_config.sigmaMinSq, m_config.sigmaMaxSq);
        double vx, vy; // eigenvector for l1
        if (std::abs(cxy) > 1e-30) {
            vx = l1 - cyy;
            vy = cxy;
        } else {
            vx = cxx >= cyy ? 1.0 : 0.0;
            vy = cxx >= cyy ? 0.0 : 1.0;
        }
        double len = std::sqrt(vx * vx + vy * vy);
        if (len > 0.0) {
            vx /= len;
            vy /= len;
        }
        m_cov[c][0] = c1 * vx * vx + c2 * vy * vy;
        m_cov[c][1] = (c1 - c2) * vx * vy;
        m_cov[c][2] = c1 * vy * vy + c2 * vx * vx;
        m_means[c] = mean;
    }

    double wSum = 0.0;
    for (double w : m_weights)
        wSum += w;
    for (double &w : m_weights)
        w /= wSum;
    rebuildCache();
}

double Gmm::pdf(const Vec2 &uv) const {
    double p = 0.0;
    for (int c = 0; c < m_config.components; ++c)
        p += m_weights[c] * componentPdf(c, uv);
    return p;
}

Sample2D Gmm::sample(double uSelect, const Vec2 &u) const {
    int comp = 0;
    double acc = 0.0;
    for (int c = 0; c < m_config.components; ++c) {
        acc += m_weights[c];
        if (uSelect < acc || c == m_config.components - 1) {
            comp = c;
            break;
        }
    }
    // Box-Muller, then the covariance Cholesky factor, wrapped onto the torus
    double r = std::sqrt(-2.0 * std::log(std::max(1.0 - u.x, 1e-300)));
    double z0 = r * std::cos(kTwoPi * u.y);
    double z1 = r * std::sin(kTwoPi * u.y);
    const Cache &cache = m_cache[comp];
    Vec2 p = {m_means[comp].x + cache.chol[0] * z0,
              m_means[comp].y + cache.chol[1] * z0 + cache.chol[2] * z1};
    p.x -= std::floor(p.x);
    p.y -= std::floor(p.y);
    Sample2D s;
    s.uv = p;
    s.pdf = pdf(p);
    return s;
}

void Gmm::record(const Vec2 &uv, double contribution) {
    if (!(contribution >= 0.0) || !std::isfinite(contribution))
        return;
    m_frameSamples.emplace_back(uv, contribution);
    ++m_recordCount;
}

void Gmm::endFrame(double, double) {
    if (m_frameSamples.empty())
        return;
    estepBatch(m_frameSamples);
    m_frameSamples.clear();
    mstep();
}

std::vector<uint8_t> Gmm::serialize() const {
    std::vector<uint8_t> bytes;
    auto put = [&bytes](const void *p, size_t n) {
        const uint8_t *b = static_cast<const uint8_t *>(p);
        bytes.insert(bytes.end(), b, b + n);
    };
    const char magic[8] = {'P', 'S', 'T', 'F', 'G', 'M', 'M', '1'};
    put(magic, sizeof(magic));
    int32_t comps = m_config.components;
    put(&comps, sizeof(comps));
    put(&m_config.alphaEm, sizeof(double));
    put(&m_i, sizeof(m_i));
    for (int c = 0; c < comps; ++c) {
        put(&m_weights[c], sizeof(double));
        put(&m_means[c].x, sizeof(double));
        put(&m_means[c].y, sizeof(double));
        put(m_cov[c].data(), 3 * sizeof(double));
        put(m_u[c].data(), 8 * sizeof(double));
    }
    return bytes;
}

Gmm Gmm::deserialize(std::span<const uint8_t> bytes) {
    size_t pos = 0;
    auto get = [&](void *p, size_t n) {
        if (pos + n > bytes.size())
            throw std::runtime_error("GMM snapshot truncated");
        std::memcpy(p, bytes.data() + pos, n);
        pos += n;
    };
    char magic[8];
    get(magic, sizeof(magic));
    if (std::memcmp(magic, "PSTFGMM1", 8) != 0)
        throw std::runtime_error("not a GMM snapshot");
    GmmConfig config;
    int32_t comps = 0;
    get(&comps, sizeof(comps));
    config.components = comps;
    get(&config.alphaEm, sizeof(double));
    Gmm gmm(config);
    get(&gmm.m_i, sizeof(gmm.m_i));
    for (int c = 0; c < comps; ++c) {
        get(&gmm.m_weights[c], sizeof(double));
        get(&gmm.m_means[c].x, sizeof(double));
        get(&gmm.m_means[c].y, sizeof(double));
        get(gmm.m_cov[c].data(), 3 * sizeof(double));
        get(gmm.m_u[c].data(), 8 * sizeof(double));
    }
    gmm.rebuildCache();
    return gmm;
}

bool Gmm::operator==(const Gmm &o) const {
    if (m_config.components != o.m_config.components || m_i != o.m_i)
        return false;
    for (int c = 0; c < m_config.components; ++c) {
        if (m_weights[c] != o.m_weights[c] || !(m_means[c] == o.m_means[c]) ||
            m_cov[c] != o.m_cov[c] || m_u[c] != o.m_u[c])
            return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// DirectionalModel facade

namespace {

std::variant<DirGrid, SphericalKdTree, Gmm> makeImpl(const ModelConfig &config) {
    switch (config.kind) {
    case ModelKind::Grid: return DirGrid(config.gridResolution);
    case ModelKind::KdTree: return SphericalKdTree(config.kdLeafCount);
    case ModelKind::Gmm: return Gmm(config.gmm);
    }
    throw std::invalid_argument("unknown model kind");
}

} // namespace

DirectionalModel::DirectionalModel(const ModelConfig &config)
    : m_config(config), m_impl(makeImpl(config)) {}

void DirectionalModel::record(const Vec2 &uv, double contribution) {
    std::visit([&](auto &m) { m.record(uv, contribution); }, m_impl);
}

void DirectionalModel::endFrame(double blend) {
    std::visit([&](auto &m) { m.endFrame(blend, m_config.kdSplitThreshold); }, m_impl);
}

double DirectionalModel::pdf(const Vec2 &uv) const {
    return std::visit([&](const auto &m) { return m.pdf(uv); }, m_impl);
}

Sample2D DirectionalModel::sample(Rng &rng) const {
    if (const DirGrid *grid = std::get_if<DirGrid>(&m_impl))
        return grid->sample(rng.next2D());
    if (const SphericalKdTree *tree = std::get_if<SphericalKdTree>(&m_impl))
        return tree->sample(rng.next2D());
    const Gmm &gmm = std::get<Gmm>(m_impl);
    double uSelect = rng.next1D();
    return gmm.sample(uSelect, rng.next2D());
}

uint64_t DirectionalModel::recordCount() const {
    return std::visit([](const auto &m) { return m.recordCount(); }, m_impl);
}

} // namespace pstf
