#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vad/errors.hpp"
#include "vad/optical_flow.hpp"

namespace vad {

// Fixed grid of half-patch-stride regions; the last row/column is clamped
// inward so a patch never reads outside the frame.
struct RegionGrid {
    static constexpr int kPatchH = 20;
    static constexpr int kPatchW = 20;
    static constexpr int kStrideH = kPatchH / 2;
    static constexpr int kStrideW = kPatchW / 2;

    int frame_w = 0;
    int frame_h = 0;
    std::vector<std::pair<int, int>> offsets; // region_id -> (x, y), row-major

    std::size_t region_count() const { return offsets.size(); }

    bool operator==(const RegionGrid& o) const {
        return frame_w == o.frame_w && frame_h == o.frame_h && offsets == o.offsets;
    }
};

inline RegionGrid build_grid(int frame_w, int frame_h) {
    if (frame_w < RegionGrid::kPatchW || frame_h < RegionGrid::kPatchH)
        raise(ErrorKind::InvalidInput, "frame smaller than a 20x20 patch");
    auto axis_offsets = [](int extent, int patch, int stride) {
        std::vector<int> offs;
        for (int o = 0;; o += stride) {
            if (o + patch >= extent) {
                offs.push_back(extent - patch); // clamped final offset
                break;
            }
            offs.push_back(o);
        }
        return offs;
    };
    RegionGrid grid;
    grid.frame_w = frame_w;
    grid.frame_h = frame_h;
    auto xs = axis_offsets(frame_w, RegionGrid::kPatchW, RegionGrid::kStrideW);
    auto ys = axis_offsets(frame_h, RegionGrid::kPatchH, RegionGrid::kStrideH);
    grid.offsets.reserve(xs.size() * ys.size());
    for (int y : ys)
        for (int x : xs) grid.offsets.emplace_back(x, y);
    return grid;
}

// 20x20x13 spatio-temporal patch cuboid anchored at (region, frame).
struct VideoPatch {
    static constexpr int kH = 20;
    static constexpr int kW = 20;
    static constexpr int kC = 13;
    static constexpr int kValues = kH * kW * kC; // 5200

    std::array<float, kValues> data{}; // plane-major: [c][y][x]
    int region_id = -1;
    int anchor_frame = -1;
    std::string sequence_id;

    float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * kH + y) * kW + x]; }
    float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * kH + y) * kW + x]; }
};

inline VideoPatch extract_patch(const ChannelStack& stack, const RegionGrid& grid, int region_id) {
    if (region_id < 0 || static_cast<std::size_t>(region_id) >= grid.region_count())
        raise(ErrorKind::OutOfRange, "extract_patch: bad region id " + std::to_string(region_id));
    auto [ox, oy] = grid.offsets[static_cast<std::size_t>(region_id)];
    VideoPatch patch;
    patch.region_id = region_id;
    patch.anchor_frame = stack.anchor_frame;
    for (int c = 0; c < VideoPatch::kC; ++c) {
        const Image& plane = stack.planes[static_cast<std::size_t>(c)];
        for (int y = 0; y < VideoPatch::kH; ++y)
            for (int x = 0; x < VideoPatch::kW; ++x)
                patch.at(c, y, x) = plane.at(ox + x, oy + y);
    }
    return patch;
}

struct MotionGateParams {
    double active_fraction_min = 0.20;
    double flow_mag_thresh = 0.5;   // px/frame
    double frame_diff_thresh = 10.0; // intensity units on [0, 255]
};

enum class GateDecision { Keep, Skip };

// A pixel is active if any of the 6 flow fields moves it faster than
// flow_mag_thresh, or if it changed by more than frame_diff_thresh since the
// previous frame. Keep the patch when at least 20% of its pixels are active.
inline GateDecision motion_gate(const VideoPatch& patch, const MotionGateParams& params,
                                const float* prev_gray_window = nullptr) {
    int active = 0;
    double flow_thresh_sq = params.flow_mag_thresh * params.flow_mag_thresh;
    for (int y = 0; y < VideoPatch::kH; ++y) {
        for (int x = 0; x < VideoPatch::kW; ++x) {
            bool is_active = false;
            for (int k = 0; k < 6 && !is_active; ++k) {
                float mu = patch.at(1 + 2 * k, y, x);
                float mv = patch.at(2 + 2 * k, y, x);
                if (static_cast<double>(mu) * mu + static_cast<double>(mv) * mv > flow_thresh_sq)
                    is_active = true;
            }
            if (!is_active && prev_gray_window != nullptr) {
                float prev = prev_gray_window[static_cast<std::size_t>(y) * VideoPatch::kW + x];
                if (std::fabs(patch.at(0, y, x) - prev) > params.frame_diff_thresh) is_active = true;
            }
            active += is_active ? 1 : 0;
        }
    }
    double needed = params.active_fraction_min * (VideoPatch::kH * VideoPatch::kW);
    return static_cast<double>(active) >= needed ? GateDecision::Keep : GateDecision::Skip;
}

// 20x20 grayscale window of frame t-1 at the region offset, for the gate's
// frame-difference test.
inline std::array<float, VideoPatch::kH * VideoPatch::kW> gray_window(const Image& frame,
                                                                      const RegionGrid& grid,
                                                                      int region_id) {
    auto [ox, oy] = grid.offsets[static_cast<std::size_t>(region_id)];
    std::array<float, VideoPatch::kH * VideoPatch::kW> out{};
    for (int y = 0; y < VideoPatch::kH; ++y)
        for (int x = 0; x < VideoPatch::kW; ++x)
            out[static_cast<std::size_t>(y) * VideoPatch::kW + x] = frame.at(ox + x, oy + y);
    return out;
}

} // namespace vad
