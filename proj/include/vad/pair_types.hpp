#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "vad/binio.hpp"
#include "vad/errors.hpp"
#include "vad/patch_grid.hpp"

namespace vad {

// A patch after preprocessing: all 13 planes mapped into [-1, 1].
struct PatchTensor {
    static constexpr int kValues = VideoPatch::kValues;

    std::array<float, kValues> v{};

    float& at(int c, int y, int x) {
        return v[(static_cast<std::size_t>(c) * VideoPatch::kH + y) * VideoPatch::kW + x];
    }
    float at(int c, int y, int x) const {
        return v[(static_cast<std::size_t>(c) * VideoPatch::kH + y) * VideoPatch::kW + x];
    }

    bool operator==(const PatchTensor& o) const { return v == o.v; }
};

enum class PairProvenance : std::uint8_t {
    NnMatch = 0,
    HardNegative = 1,
    SampledNegative = 2,
    SelfAugmented = 3,
};

// One Siamese training example. pre_distance is the normalized-L1 value the
// pair was curated with; NaN for self-augmented pairs.
struct PairExample {
    PatchTensor patch_a;
    PatchTensor patch_b;
    std::uint8_t label = 0; // 0 = similar, 1 = dissimilar
    PairProvenance provenance = PairProvenance::NnMatch;
    float pre_distance = std::numeric_limits<float>::quiet_NaN();
};

inline bool label_matches_provenance(const PairExample& p) {
    bool similar = p.provenance == PairProvenance::NnMatch || p.provenance == PairProvenance::SelfAugmented;
    return p.label == (similar ? 0 : 1);
}

// Pair dataset file: `VADP1`, u32 count, then records of
// (u8 label, u8 provenance, f32 pre_distance, patch_a, patch_b) with patches
// as f32 little-endian 20*20*13 blocks at preprocessed scale.
inline void save_pairs(const std::filesystem::path& path, const std::vector<PairExample>& pairs) {
    ByteWriter w;
    w.magic("VADP1");
    w.u32(static_cast<std::uint32_t>(pairs.size()));
    for (const auto& p : pairs) {
        w.u8(p.label);
        w.u8(static_cast<std::uint8_t>(p.provenance));
        w.f32(p.pre_distance);
        w.f32_array(p.patch_a.v.data(), PatchTensor::kValues);
        w.f32_array(p.patch_b.v.data(), PatchTensor::kValues);
    }
    write_file_bytes(path, w.data());
}

inline std::vector<PairExample> load_pairs(const std::filesystem::path& path) {
    auto bytes = read_file_bytes(path);
    ByteReader r(bytes);
    r.expect_magic("VADP1", path.string());
    std::uint32_t count = r.u32();
    std::vector<PairExample> pairs(count);
    for (auto& p : pairs) {
        p.label = r.u8();
        std::uint8_t prov = r.u8();
        if (p.label > 1 || prov > 3) raise(ErrorKind::Format, path.string() + ": bad pair record");
        p.provenance = static_cast<PairProvenance>(prov);
        p.pre_distance = r.f32();
        r.f32_into(p.patch_a.v.data(), PatchTensor::kValues);
        r.f32_into(p.patch_b.v.data(), PatchTensor::kValues);
    }
    if (!r.at_end()) raise(ErrorKind::Format, path.string() + ": trailing bytes");
    return pairs;
}

} // namespace vad
