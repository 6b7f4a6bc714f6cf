// pstf is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "pstf/mappings.h"
#include "pstf/rng.h"
#include "pstf/vecmath.h"

namespace pstf {

/// Which radiance field a store approximates.
enum class FieldKind : uint32_t { Lo = 0, LoMinusE = 1, Li = 2, FLi = 3 };

/// Sampling techniques that may feed a field (see FieldStoreConfig::techniqueMask).
enum Technique : uint32_t {
    TechCamera = 1u,
    TechContinuation = 2u,
    TechNee = 4u,
    TechAll = TechCamera | TechContinuation | TechNee,
};

/// Address of one basis function: a spatial cell and a directional cell at a
/// hierarchy level. Quantization is a pure function of (position, direction,
/// level); the checksum verifies hash-table residents against lookups.
struct SpatioDirectionalKey {
    int32_t level = 0;
    int32_t cell[3] = {0, 0, 0};
    int32_t dirCell[2] = {0, 0};
    uint32_t checksum = 0;

    bool operator==(const SpatioDirectionalKey &o) const {
        return level == o.level && cell[0] == o.cell[0] && cell[1] == o.cell[1] &&
               cell[2] == o.cell[2] && dirCell[0] == o.dirCell[0] && dirCell[1] == o.dirCell[1];
    }
};

struct FieldStoreConfig {
    FieldKind kind = FieldKind::Lo;
    uint32_t capacityLog2 = 22; // hash-table entries
    int maxLevel = 4;           // levels 0..maxLevel
    double baseCellSize = 0.01; // meters, level-0 spatial cell edge
    double levelSelectK = 4.0;  // footprint multiplier for level selection
    double tMax = 64.0;         // temporal window cap; <= 0 means unlimited
    enum class Blend { Sqrt, Linear } blend = Blend::Sqrt;
    uint32_t techniqueMask = TechAll;
    uint32_t probeWindow = 32;
    uint32_t evictAgeFrames = 64; // eviction threshold, applied at end_frame
};

struct FieldQueryResult {
    RGB value{0.0};
    bool valid = false;
    bool fallback = false; // true when a coarser level answered
    int level = 0;
};

/// Per-frame transported update value (Alg.-style gather form).
///   Lo / LoMinusE: (lENext + lTildeNext) * f * ratio
///   Li:            lTildeNext * ratio
///   FLi:           lTildeNext * f * ratio
/// The geometric throughput cancels against area-measure pdfs, so `ratio`
/// carries only the projected MIS-weight-over-pdf factor supplied by callers.
RGB computeUpdateValue(FieldKind kind, const RGB &lTildeNext, const RGB &lENext, const RGB &f,
                       double ratio);

/// Hierarchical spatio-directional hash storage for one radiance field, with
/// double-buffered per-frame density-estimation updates (Jacobi discipline:
/// queries during a frame only ever see values committed by endFrame).
class FieldStore {
public:
    explicit FieldStore(const FieldStoreConfig &config);
    ~FieldStore();

    const FieldStoreConfig &config() const { return m_config; }

    int selectLevel(double footprint) const;
    double cellSize(int level) const;
    int dirResolution(int level) const;
    SpatioDirectionalKey keyFor(const Vec3 &position, const Vec3 &direction, int level) const;

    /// c_new += w (atomic). Inserts the cell on first touch.
    void incrementCounter(const SpatioDirectionalKey &key, double w);
    /// value_new_accum += value * w (atomic). Non-finite input is rejected and counted.
    void accumulate(const SpatioDirectionalKey &key, const RGB &value, double w);

    FieldQueryResult query(const Vec3 &position, const Vec3 &direction, double footprint) const;
    FieldQueryResult queryFromLevel(const Vec3 &position, const Vec3 &direction, int level) const;

    /// Commits the frame: per touched cell, candidate = accum / c_new,
    /// value_old <- (1 - alpha) * value_old + alpha * candidate with
    /// alpha = max(sqrt(c_new / (c_old + c_new)), 1 / tMax); counters roll over.
    /// Exclusive: no concurrent increment/accumulate/query.
    void endFrame();

    void invalidate();                  // zero all c_old
    void invalidate(const Aabb &region); // zero c_old where the spatial cell center lies inside

    uint64_t frameIndex() const { return m_frame; }
    uint64_t rejectedUpdates() const { return m_rejectedUpdates; }
    uint64_t droppedInserts() const { return m_droppedInserts; }
    uint64_t internalErrors() const { return m_internalErrors; }
    size_t liveCellCount() const;
    /// c_old-weighted mean of committed values over all live cells.
    RGB weightedMeanValue() const;

    struct SnapshotRecord {
        int32_t level;
        int32_t cell[3];
        int32_t dirCell[2];
        uint32_t checksum;
        double value[3];
        double cOld;
    };
    /// Versioned little-endian binary dump of (key fields, value_old, c_old),
    /// sorted by key. Layout documented in the README.
    void dumpSnapshot(const std::string &path) const;
    static std::vector<SnapshotRecord> readSnapshot(const std::string &path);

private:
    struct Slot;
    int findSlot(const SpatioDirectionalKey &key) const;
    int findOrInsertSlot(const SpatioDirectionalKey &key);

    FieldStoreConfig m_config;
    uint32_t m_mask;
    std::unique_ptr<Slot[]> m_slots;
    uint64_t m_frame = 0;
    std::atomic<uint64_t> m_rejectedUpdates{0};
    std::atomic<uint64_t> m_droppedInserts{0};
    std::atomic<uint64_t> m_internalErrors{0};
};

/// Buffered field updates for the deterministic reduction mode: updates are
/// collected during the frame and applied in a canonical order that does not
/// depend on submission order or worker count.
class FieldUpdateQueue {
public:
    void pushCounter(const SpatioDirectionalKey &key, double w) {
        m_updates.push_back({key, RGB(0.0), w, true});
    }
    void pushValue(const SpatioDirectionalKey &key, const RGB &value, double w) {
        m_updates.push_back({key, value, w, false});
    }
    void append(FieldUpdateQueue &&other);
    size_t size() const { return m_updates.size(); }
    void clear() { m_updates.clear(); }

    /// Sorts canonically and applies to the store. Bitwise reproducible for
    /// any submission order of the same update multiset.
    void apply(FieldStore &store);

private:
    struct Update {
        SpatioDirectionalKey key;
        RGB value;
        double w;
        bool isCounter;
    };
    std::vector<Update> m_updates;
};

} // namespace pstf
