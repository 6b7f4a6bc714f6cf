// pstf is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include "pstf/field.h"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <tuple>

namespace pstf {

RGB computeUpdateValue(FieldKind kind, const RGB &lTildeNext, const RGB &lENext, const RGB &f,
                       double ratio) {
    switch (kind) {
    case FieldKind::Lo:
    case FieldKind::LoMinusE:
        return (lENext + lTildeNext) * f * ratio;
    case FieldKind::Li:
        return lTildeNext * ratio;
    case FieldKind::FLi:
        return lTildeNext * f * ratio;
    }
    throw std::runtime_error("computeUpdateValue: unknown field kind");
}

// ---------------------------------------------------------------------------
// Hash table

namespace {

inline void atomicAdd(std::atomic<double> &var, double value) {
    double current = var.load(std::memory_order_relaxed);
    while (!var.compare_exchange_weak(current, current + value, std::memory_order_relaxed)) {
    }
}

inline uint64_t packKeyFields(const SpatioDirectionalKey &key) {
    uint64_t h = uint64_t(uint32_t(key.level));
    h = mixBits(h ^ (uint64_t(uint32_t(key.cell[0])) << 32 | uint32_t(key.cell[1])));
    h = mixBits(h ^ (uint64_t(uint32_t(key.cell[2])) << 32 | uint32_t(key.dirCell[0])));
    h = mixBits(h ^ uint64_t(uint32_t(key.dirCell[1])));
    return h;
}

} // namespace

struct FieldStore::Slot {
    std::atomic<uint32_t> checksum{0}; // 0 = empty
    int32_t level = 0;
    int32_t cell[3] = {0, 0, 0};
    int32_t dirCell[2] = {0, 0};
    RGB valueOld{0.0};
    double cOld = 0.0;
    std::atomic<double> accum[3]{0.0, 0.0, 0.0};
    std::atomic<double> cNew{0.0};
    std::atomic<uint32_t> lastTouched{0};
};

FieldStore::FieldStore(const FieldStoreConfig &config) : m_config(config) {
    size_t capacity = size_t(1) << m_config.capacityLog2;
    m_mask = uint32_t(capacity - 1);
    m_slots = std::make_unique<Slot[]>(capacity);
}

FieldStore::~FieldStore() = default;

int FieldStore::selectLevel(double footprint) const {
    if (!(footprint > 0.0))
        return 0;
    double scaled = footprint * m_config.levelSelectK / m_config.baseCellSize;
    if (scaled <= 1.0)
        return 0;
    int level = int(std::floor(std::log2(scaled)));
    return std::min(std::max(level, 0), m_config.maxLevel);
}

double FieldStore::cellSize(int level) const {
    return m_config.baseCellSize * double(uint64_t(1) << level);
}

int FieldStore::dirResolution(int level) const {
    return 8 >> std::min(level, 2);
}

SpatioDirectionalKey FieldStore::keyFor(const Vec3 &position, const Vec3 &direction,
                                        int level) const {
    SpatioDirectionalKey key;
    key.level = level;
    double cs = cellSize(level);
    key.cell[0] = int32_t(std::floor(position.x / cs));
    key.cell[1] = int32_t(std::floor(position.y / cs));
    key.cell[2] = int32_t(std::floor(position.z / cs));
    int d = dirResolution(level);
    Vec2 uv = sphereToSquare(direction);
    key.dirCell[0] = std::min(int32_t(uv.x * d), int32_t(d - 1));
    key.dirCell[1] = std::min(int32_t(uv.y * d), int32_t(d - 1));
    uint32_t sum = uint32_t(mixBits(packKeyFields(key) ^ 0x5bf03635ULL));
    key.checksum = sum == 0 ? 1u : sum;
    return key;
}

int FieldStore::findSlot(const SpatioDirectionalKey &key) const {
    uint32_t start = uint32_t(packKeyFields(key)) & m_mask;
    for (uint32_t i = 0; i < m_config.probeWindow; ++i) {
        uint32_t idx = (start + i) & m_mask;
        uint32_t sum = m_slots[idx].checksum.load(std::memory_order_acquire);
        if (sum == key.checksum)
            return int(idx);
        if (sum == 0)
            return -1;
    }
    return -1;
}

int FieldStore::findOrInsertSlot(const SpatioDirectionalKey &key) {
    uint32_t start = uint32_t(packKeyFields(key)) & m_mask;
    for (uint32_t i = 0; i < m_config.probeWindow; ++i) {
        uint32_t idx = (start + i) & m_mask;
        Slot &slot = m_slots[idx];
        uint32_t sum = slot.checksum.load(std::memory_order_acquire);
        if (sum == key.checksum) {
            slot.lastTouched.store(uint32_t(m_frame), std::memory_order_relaxed);
            return int(idx);
        }
        if (sum == 0) {
            uint32_t expected = 0;
            if (slot.checksum.compare_exchange_strong(expected, key.checksum,
                                                      std::memory_order_acq_rel)) {
                slot.level = key.level;
                std::copy(key.cell, key.cell + 3, slot.cell);
                std::copy(key.dirCell, key.dirCell + 2, slot.dirCell);
                slot.lastTouched.store(uint32_t(m_frame), std::memory_order_relaxed);
                return int(idx);
            }
            if (expected == key.checksum) {
                slot.lastTouched.store(uint32_t(m_frame), std::memory_order_relaxed);
                return int(idx);
            }
        }
    }
    // probe window exhausted; drop the update (aged cells are evicted at the
    // next endFrame) rather than corrupting a resident cell
    m_droppedInserts.fetch_add(1, std::memory_order_relaxed);
    return -1;
}

void FieldStore::incrementCounter(const SpatioDirectionalKey &key, double w) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
        m_rejectedUpdates.fetch_add(1, std::memory_order_relaxed);
        return;
    }
    int idx = findOrInsertSlot(key);
    if (idx < 0)
        return;
    if (w > 0.0)
        atomicAdd(m_slots[idx].cNew, w);
}

void FieldStore::accumulate(const SpatioDirectionalKey &key, const RGB &value, double w) {
    if (!isFinite(value) || !std::isfinite(w) || w < 0.0) {
        m_rejectedUpdates.fetch_add(1, std::memory_order_relaxed);
        return;
    }
    int idx = findOrInsertSlot(key);
    if (idx < 0)
        return;
    Slot &slot = m_slots[idx];
    atomicAdd(slot.accum[0], value.r * w);
    atomicAdd(slot.accum[1], value.g * w);
    atomicAdd(slot.accum[2], value.b * w);
}

FieldQueryResult FieldStore::query(const Vec3 &position, const Vec3 &direction,
                                   double footprint) const {
    return queryFromLevel(position, direction, selectLevel(footprint));
}

FieldQueryResult FieldStore::queryFromLevel(const Vec3 &position, const Vec3 &direction,
                                            int level) const {
    FieldQueryResult result;
    for (int l = level; l <= m_config.maxLevel; ++l) {
        SpatioDirectionalKey key = keyFor(position, direction, l);
        int idx = findSlot(key);
        if (idx >= 0 && m_slots[idx].cOld > 0.0) {
            result.value = m_slots[idx].valueOld;
            result.valid = true;
            result.fallback = l != level;
            result.level = l;
            return result;
        }
    }
    result.level = level;
    return result;
}

void FieldStore::endFrame() {
    size_t capacity = size_t(m_mask) + 1;

    // first pass: mean c_new over touched cells (for the c_old cap), occupancy
    double cNewSum = 0.0;
    size_t touched = 0, live = 0;
    for (size_t i = 0; i < capacity; ++i) {
        Slot &slot = m_slots[i];
        if (slot.checksum.load(std::memory_order_relaxed) == 0)
            continue;
        ++live;
        double cn = slot.cNew.load(std::memory_order_relaxed);
        if (cn > 0.0) {
            cNewSum += cn;
            ++touched;
        }
    }
    double meanCNew = touched > 0 ? cNewSum / double(touched) : 0.0;
    bool limited = m_config.tMax > 0.0 && std::isfinite(m_config.tMax);
    double tMax = m_config.tMax;
    double cOldCap = limited ? (tMax * tMax - tMax) * meanCNew : 0.0;

    for (size_t i = 0; i < capacity; ++i) {
        Slot &slot = m_slots[i];
        if (slot.checksum.load(std::memory_order_relaxed) == 0)
            continue;
        double cn = slot.cNew.load(std::memory_order_relaxed);
        RGB accum(slot.accum[0].load(std::memory_order_relaxed),
                  slot.accum[1].load(std::memory_order_relaxed),
                  slot.accum[2].load(std::memory_order_relaxed));
        if (cn > 0.0) {
            RGB candidate = accum / cn;
            double alpha = m_config.blend == FieldStoreConfig::Blend::Sqrt
                               ? std::sqrt(cn / (slot.cOld + cn))
                               : cn / (slot.cOld + cn);
            if (limited)
                alpha = std::max(alpha, 1.0 / tMax);
            slot.valueOld = slot.valueOld * (1.0 - alpha) + candidate * alpha;
            slot.cOld += cn;
            if (limited)
                slot.cOld = std::min(slot.cOld, cOldCap);
        } else if (!accum.isBlack()) {
            m_internalErrors.fetch_add(1, std::memory_order_relaxed);
        }
        slot.cNew.store(0.0, std::memory_order_relaxed);
        slot.accum[0].store(0.0, std::memory_order_relaxed);
        slot.accum[1].store(0.0, std::memory_order_relaxed);
        slot.accum[2].store(0.0, std::memory_order_relaxed);
    }

    // age-based eviction once the table gets crowded
    if (live * 4 > capacity * 3) {
        for (size_t i = 0; i < capacity; ++i) {
            Slot &slot = m_slots[i];
            if (slot.checksum.load(std::memory_order_relaxed) == 0)
                continue;
            uint32_t age = uint32_t(m_frame) - slot.lastTouched.load(std::memory_order_relaxed);
            if (age >= m_config.evictAgeFrames) {
                slot.checksum.store(0, std::memory_order_relaxed);
                slot.valueOld = RGB(0.0);
                slot.cOld = 0.0;
            }
        }
    }

    ++m_frame;
}

void FieldStore::invalidate() {
    size_t capacity = size_t(m_mask) + 1;
    for (size_t i = 0; i < capacity; ++i)
        if (m_slots[i].checksum.load(std::memory_order_relaxed) != 0)
            m_slots[i].cOld = 0.0;
}

void FieldStore::invalidate(const Aabb &region) {
    size_t capacity = size_t(m_mask) + 1;
    for (size_t i = 0; i < capacity; ++i) {
        Slot &slot = m_slots[i];
        if (slot.checksum.load(std::memory_order_relaxed) == 0)
            continue;
        double cs = cellSize(slot.level);
        Vec3 center((slot.cell[0] + 0.5) * cs, (slot.cell[1] + 0.5) * cs,
                    (slot.cell[2] + 0.5) * cs);
        if (region.contains(center))
            slot.cOld = 0.0;
    }
}

size_t FieldStore::liveCellCount() const {
    size_t capacity = size_t(m_mask) + 1, live = 0;
    for (size_t i = 0; i < capacity; ++i)
        if (m_slots[i].checksum.load(std::memory_order_relaxed) != 0)
            ++live;
    return live;
}

RGB FieldStore::weightedMeanValue() const {
    size_t capacity = size_t(m_mask) + 1;
    RGB sum(0.0);
    double weight = 0.0;
    for (size_t i = 0; i < capacity; ++i) {
        const Slot &slot = m_slots[i];
        if (slot.checksum.load(std::memory_order_relaxed) == 0 || slot.cOld <= 0.0)
            continue;
        sum += slot.valueOld * slot.cOld;
        weight += slot.cOld;
    }
    return weight > 0.0 ? sum / weight : RGB(0.0);
}

// ---------------------------------------------------------------------------
// Snapshots

namespace {
constexpr char kSnapshotMagic[8] = {'P', 'S', 'T', 'F', 'S', 'N', 'A', 'P'};
constexpr uint32_t kSnapshotVersion = 1;
} // namespace

void FieldStore::dumpSnapshot(const std::string &path) const {
    std::vector<SnapshotRecord> records;
    size_t capacity = size_t(m_mask) + 1;
    for (size_t i = 0; i < capacity; ++i) {
        const Slot &slot = m_slots[i];
        if (slot.checksum.load(std::memory_order_relaxed) == 0)
            continue;
        SnapshotRecord rec;
        rec.level = slot.level;
        std::copy(slot.cell, slot.cell + 3, rec.cell);
        std::copy(slot.dirCell, slot.dirCell + 2, rec.dirCell);
        rec.checksum = slot.checksum.load(std::memory_order_relaxed);
        rec.value[0] = slot.valueOld.r;
        rec.value[1] = slot.valueOld.g;
        rec.value[2] = slot.valueOld.b;
        rec.cOld = slot.cOld;
        records.push_back(rec);
    }
    std::sort(records.begin(), records.end(), [](const SnapshotRecord &a, const SnapshotRecord &b) {
        return std::tie(a.level, a.cell[0], a.cell[1], a.cell[2], a.dirCell[0], a.dirCell[1]) <
               std::tie(b.level, b.cell[0], b.cell[1], b.cell[2], b.dirCell[0], b.dirCell[1]);
    });

    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot open snapshot file '" + path + "' for writing");
    out.write(kSnapshotMagic, sizeof(kSnapshotMagic));
    uint32_t version = kSnapshotVersion;
    uint32_t kind = uint32_t(m_config.kind);
    uint64_t count = records.size();
    out.write(reinterpret_cast<const char *>(&version), sizeof(version));
    out.write(reinterpret_cast<const char *>(&kind), sizeof(kind));
    out.write(reinterpret_cast<const char *>(&count), sizeof(count));
    for (const SnapshotRecord &rec : records) {
        out.write(reinterpret_cast<const char *>(&rec.level), sizeof(rec.level));
        out.write(reinterpret_cast<const char *>(rec.cell), sizeof(rec.cell));
        out.write(reinterpret_cast<const char *>(rec.dirCell), sizeof(rec.dirCell));
        out.write(reinterpret_cast<const char *>(&rec.checksum), sizeof(rec.checksum));
        out.write(reinterpret_cast<const char *>(rec.value), sizeof(rec.value));
        out.write(reinterpret_cast<const char *>(&rec.cOld), sizeof(rec.cOld));
    }
}

std::vector<FieldStore::SnapshotRecord> FieldStore::readSnapshot(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open snapshot file '" + path + "'");
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kSnapshotMagic, sizeof(magic)) != 0)
        throw std::runtime_error("'" + path + "': not a field snapshot");
    uint32_t version = 0, kind = 0;
    uint64_t count = 0;
    in.read(reinterpret_cast<char *>(&version), sizeof(version));
    in.read(reinterpret_cast<char *>(&kind), sizeof(kind));
    in.read(reinterpret_cast<char *>(&count), sizeof(count));
    if (version != kSnapshotVersion)
        throw std::runtime_error("'" + path + "': unsupported snapshot version");
    std::vector<SnapshotRecord> records(count);
    for (SnapshotRecord &rec : records) {
        in.read(reinterpret_cast<char *>(&rec.level), sizeof(rec.level));
        in.read(reinterpret_cast<char *>(rec.cell), sizeof(rec.cell));
        in.read(reinterpret_cast<char *>(rec.dirCell), sizeof(rec.dirCell));
        in.read(reinterpret_cast<char *>(&rec.checksum), sizeof(rec.checksum));
        in.read(reinterpret_cast<char *>(rec.value), sizeof(rec.value));
        in.read(reinterpret_cast<char *>(&rec.cOld), sizeof(rec.cOld));
    }
    if (!in)
        throw std::runtime_error("'" + path + "': truncated snapshot");
    return records;
}

// ---------------------------------------------------------------------------
// Deterministic update queue

void FieldUpdateQueue::append(FieldUpdateQueue &&other) {
    m_updates.insert(m_updates.end(), other.m_updates.begin(), other.m_updates.end());
    other.m_updates.clear();
}

void FieldUpdateQueue::apply(FieldStore &store) {
    auto orderBits = [](double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        return bits;
    };
    std::sort(m_updates.begin(), m_updates.end(), [&](const Update &a, const Update &b) {
        return std::tie(a.key.level, a.key.cell[0], a.key.cell[1], a.key.cell[2],
                        a.key.dirCell[0], a.key.dirCell[1]) <
                   std::tie(b.key.level, b.key.cell[0], b.key.cell[1], b.key.cell[2],
                            b.key.dirCell[0], b.key.dirCell[1]) ||
               (a.key == b.key &&
                std::make_tuple(a.isCounter, orderBits(a.value.r), orderBits(a.value.g),
                                orderBits(a.value.b), orderBits(a.w)) <
                    std::make_tuple(b.isCounter, orderBits(b.value.r), orderBits(b.value.g),
                                    orderBits(b.value.b), orderBits(b.w)));
    });
    for (const Update &u : m_updates) {
        if (u.isCounter)
            store.incrementCounter(u.key, u.w);
        else
            store.accumulate(u.key, u.value, u.w);
    }
    m_updates.clear();
}

} // namespace pstf
