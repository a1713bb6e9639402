#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <vector>

#include "vad/binio.hpp"
#include "vad/errors.hpp"
#include "vad/image.hpp"
#include "vad/media_ingest.hpp"

namespace vad {

struct FlowField {
    Image u; // horizontal displacement, px/frame; positive = rightward
    Image v; // vertical displacement; positive = downward

    int width() const { return u.width(); }
    int height() const { return u.height(); }
};

// Which 12 motion planes a channel stack carries: absolute flow components
// (default) or absolute spatial gradients of the flow magnitude.
enum class MotionPlaneMode { Components, SpatialGradients };

struct FlowParams {
    int pyramid_levels = 3;
    double smoothness = 15.0; // Horn-Schunck alpha
    int iterations = 100;     // Jacobi iterations per level
    MotionPlaneMode motion_planes = MotionPlaneMode::Components;
};

namespace flow_detail {

// Horn-Schunck derivative stencils over the 2x2x2 cube between a and b.
inline void input_derivatives(const Image& a, const Image& b, Image& ex, Image& ey, Image& et) {
    int w = a.width(), h = a.height();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            auto A = [&](int i, int j) { return a.at_clamped(i, j); };
            auto B = [&](int i, int j) { return b.at_clamped(i, j); };
            ex.at(x, y) = 0.25f * (A(x + 1, y) - A(x, y) + A(x + 1, y + 1) - A(x, y + 1) +
                                   B(x + 1, y) - B(x, y) + B(x + 1, y + 1) - B(x, y + 1));
            ey.at(x, y) = 0.25f * (A(x, y + 1) - A(x, y) + A(x + 1, y + 1) - A(x + 1, y) +
                                   B(x, y + 1) - B(x, y) + B(x + 1, y + 1) - B(x + 1, y));
            et.at(x, y) = 0.25f * (B(x, y) - A(x, y) + B(x + 1, y) - A(x + 1, y) +
                                   B(x, y + 1) - A(x, y + 1) + B(x + 1, y + 1) - A(x + 1, y + 1));
        }
    }
}

inline void local_average(const Image& f, Image& out) {
    int w = f.width(), h = f.height();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            out.at(x, y) =
                (1.0f / 6.0f) * (f.at_clamped(x - 1, y) + f.at_clamped(x + 1, y) +
                                 f.at_clamped(x, y - 1) + f.at_clamped(x, y + 1)) +
                (1.0f / 12.0f) * (f.at_clamped(x - 1, y - 1) + f.at_clamped(x + 1, y - 1) +
                                  f.at_clamped(x - 1, y + 1) + f.at_clamped(x + 1, y + 1));
        }
    }
}

// Classic Jacobi update solving for the flow increment at one level.
inline void hs_iterations(const Image& ex, const Image& ey, const Image& et, Image& du, Image& dv,
                          double alpha, int iterations) {
    int w = ex.width(), h = ex.height();
    float alpha2 = static_cast<float>(alpha * alpha);
    Image dubar(w, h), dvbar(w, h);
    for (int it = 0; it < iterations; ++it) {
        local_average(du, dubar);
        local_average(dv, dvbar);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                float Ex = ex.at(x, y), Ey = ey.at(x, y), Et = et.at(x, y);
                float t = (Ex * dubar.at(x, y) + Ey * dvbar.at(x, y) + Et) /
                          (alpha2 + Ex * Ex + Ey * Ey);
                du.at(x, y) = dubar.at(x, y) - Ex * t;
                dv.at(x, y) = dvbar.at(x, y) - Ey * t;
            }
        }
    }
}

inline Image warp_bilinear(const Image& img, const Image& u, const Image& v) {
    Image out(img.width(), img.height());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            out.at(x, y) = img.sample_bilinear(x + u.at(x, y), y + v.at(x, y));
    return out;
}

inline Image upsample_flow(const Image& f, int out_w, int out_h) {
    Image up = resize_bilinear(f, out_w, out_h);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) up.at(x, y) *= 2.0f;
    return up;
}

} // namespace flow_detail

// Dense coarse-to-fine Horn-Schunck flow from frame_a to frame_b: the data
// term is I_b(x + u, y + v) = I_a(x, y), so motion to the right gives u > 0.
inline FlowField estimate_flow(const Image& frame_a, const Image& frame_b, const FlowParams& params = {}) {
    if (!frame_a.same_shape(frame_b))
        raise(ErrorKind::InvalidInput, "estimate_flow: frame dimensions differ");

    // build the pyramid, dropping levels that would fall under 8 px
    std::vector<Image> pyr_a{frame_a}, pyr_b{frame_b};
    for (int l = 1; l < params.pyramid_levels; ++l) {
        const Image& pa = pyr_a.back();
        if (pa.width() < 16 || pa.height() < 16) break;
        pyr_a.push_back(downsample_half(pa));
        pyr_b.push_back(downsample_half(pyr_b.back()));
    }

    int coarsest = static_cast<int>(pyr_a.size()) - 1;
    Image u(pyr_a[coarsest].width(), pyr_a[coarsest].height());
    Image v(pyr_a[coarsest].width(), pyr_a[coarsest].height());
    for (int l = coarsest; l >= 0; --l) {
        const Image& a = pyr_a[static_cast<std::size_t>(l)];
        const Image& b = pyr_b[static_cast<std::size_t>(l)];
        if (l != coarsest) {
            u = flow_detail::upsample_flow(u, a.width(), a.height());
            v = flow_detail::upsample_flow(v, a.width(), a.height());
        }
        Image bw = flow_detail::warp_bilinear(b, u, v);
        Image ex(a.width(), a.height()), ey(a.width(), a.height()), et(a.width(), a.height());
        flow_detail::input_derivatives(a, bw, ex, ey, et);
        Image du(a.width(), a.height()), dv(a.width(), a.height());
        flow_detail::hs_iterations(ex, ey, et, du, dv, params.smoothness, params.iterations);
        for (int y = 0; y < a.height(); ++y) {
            for (int x = 0; x < a.width(); ++x) {
                u.at(x, y) += du.at(x, y);
                v.at(x, y) += dv.at(x, y);
                if (!std::isfinite(u.at(x, y)) || !std::isfinite(v.at(x, y)))
                    raise(ErrorKind::Numeric, "estimate_flow: non-finite flow value");
            }
        }
    }
    return {std::move(u), std::move(v)};
}

// C = 13 full-frame planes anchored at frame t: grayscale plus 6 motion-plane
// pairs from the flows between frames (t, t+1) .. (t+5, t+6).
struct ChannelStack {
    static constexpr int kChannels = 13;
    static constexpr int kTemporalDepth = 7;

    std::array<Image, kChannels> planes;
    int anchor_frame = 0;

    int width() const { return planes[0].width(); }
    int height() const { return planes[0].height(); }
};

inline void motion_planes_from_flow(const FlowField& flow, MotionPlaneMode mode, Image& p0, Image& p1) {
    int w = flow.width(), h = flow.height();
    p0 = Image(w, h);
    p1 = Image(w, h);
    if (mode == MotionPlaneMode::Components) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                p0.at(x, y) = std::fabs(flow.u.at(x, y));
                p1.at(x, y) = std::fabs(flow.v.at(x, y));
            }
    } else {
        Image mag(w, h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                mag.at(x, y) = std::hypot(flow.u.at(x, y), flow.v.at(x, y));
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                p0.at(x, y) = std::fabs(0.5f * (mag.at_clamped(x + 1, y) - mag.at_clamped(x - 1, y)));
                p1.at(x, y) = std::fabs(0.5f * (mag.at_clamped(x, y + 1) - mag.at_clamped(x, y - 1)));
            }
    }
}

// Flow provider abstraction so stacks can come from fresh estimation or a cache.
class FlowSource {
public:
    virtual ~FlowSource() = default;
    virtual const FlowField& flow_between(int t) const = 0; // frames (t, t+1)
};

class ComputedFlowSource : public FlowSource {
public:
    ComputedFlowSource(const FrameSequence& seq, const FlowParams& params) {
        flows_.reserve(seq.frames.size() > 0 ? seq.frames.size() - 1 : 0);
        for (std::size_t t = 0; t + 1 < seq.frames.size(); ++t)
            flows_.push_back(estimate_flow(seq.frames[t], seq.frames[t + 1], params));
    }

    const FlowField& flow_between(int t) const override {
        if (t < 0 || static_cast<std::size_t>(t) >= flows_.size())
            raise(ErrorKind::OutOfRange, "flow index out of range");
        return flows_[static_cast<std::size_t>(t)];
    }

private:
    std::vector<FlowField> flows_;
};

inline ChannelStack build_channel_stack(const FrameSequence& seq, int t, const FlowSource& flows,
                                        MotionPlaneMode mode = MotionPlaneMode::Components) {
    if (t < 0 || static_cast<std::size_t>(t) + ChannelStack::kTemporalDepth - 1 >= seq.frames.size())
        raise(ErrorKind::OutOfRange, "build_channel_stack: needs frames t..t+6 (t=" +
                                         std::to_string(t) + ", frames=" +
                                         std::to_string(seq.frames.size()) + ")");
    ChannelStack stack;
    stack.anchor_frame = t;
    stack.planes[0] = seq.frames[static_cast<std::size_t>(t)];
    for (int k = 0; k < 6; ++k) {
        const FlowField& f = flows.flow_between(t + k);
        motion_planes_from_flow(f, mode, stack.planes[static_cast<std::size_t>(1 + 2 * k)],
                                stack.planes[static_cast<std::size_t>(2 + 2 * k)]);
    }
    return stack;
}

inline ChannelStack build_channel_stack(const FrameSequence& seq, int t, const FlowParams& params = {}) {
    if (t < 0 || static_cast<std::size_t>(t) + ChannelStack::kTemporalDepth - 1 >= seq.frames.size())
        raise(ErrorKind::OutOfRange, "build_channel_stack: needs frames t..t+6");
    ChannelStack stack;
    stack.anchor_frame = t;
    stack.planes[0] = seq.frames[static_cast<std::size_t>(t)];
    for (int k = 0; k < 6; ++k) {
        FlowField f = estimate_flow(seq.frames[static_cast<std::size_t>(t + k)],
                                    seq.frames[static_cast<std::size_t>(t + k + 1)], params);
        motion_planes_from_flow(f, params.motion_planes, stack.planes[static_cast<std::size_t>(1 + 2 * k)],
                                stack.planes[static_cast<std::size_t>(2 + 2 * k)]);
    }
    return stack;
}

// Flow cache record: `FLOW1` + u32 width + u32 height + u plane + v plane (f32 LE).
inline void save_flow(const std::filesystem::path& path, const FlowField& flow) {
    ByteWriter w;
    w.magic("FLOW1");
    w.u32(static_cast<std::uint32_t>(flow.width()));
    w.u32(static_cast<std::uint32_t>(flow.height()));
    w.f32_array(flow.u.data(), flow.u.size());
    w.f32_array(flow.v.data(), flow.v.size());
    write_file_bytes(path, w.data());
}

inline FlowField load_flow(const std::filesystem::path& path) {
    auto bytes = read_file_bytes(path);
    ByteReader r(bytes);
    r.expect_magic("FLOW1", path.string());
    int w = static_cast<int>(r.u32());
    int h = static_cast<int>(r.u32());
    if (w <= 0 || h <= 0 || r.remaining() != static_cast<std::size_t>(w) * h * 8)
        raise(ErrorKind::Format, path.string() + ": flow payload size mismatch");
    FlowField f{Image(w, h), Image(w, h)};
    r.f32_into(f.u.data(), f.u.size());
    r.f32_into(f.v.data(), f.v.size());
    return f;
}

inline std::filesystem::path flow_cache_path(const std::filesystem::path& cache_root,
                                             const std::string& seq_id, int t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "flow_%06d.bin", t);
    return cache_root / seq_id / buf;
}

} // namespace vad
