#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vad/anomaly_scoring.hpp"
#include "vad/errors.hpp"
#include "vad/media_ingest.hpp"

namespace vad {

struct RocPoint {
    double threshold = 0.0;
    double x = 0.0; // FPR or false positives per frame, by criterion
    double tpr = 0.0;
};

struct RocCurve {
    std::string criterion;
    std::vector<RocPoint> points; // x nondecreasing
    double auc = 0.0;
    std::optional<double> eer;
};

// Rectangle IOU; two empty boxes give 0.
inline double iou_boxes(const Box& a, const Box& b) {
    long long ix = std::max<long long>(0, std::min(a.x2(), b.x2()) - std::max(a.x, b.x));
    long long iy = std::max<long long>(0, std::min(a.y2(), b.y2()) - std::max(a.y, b.y));
    long long inter = ix * iy;
    long long uni = a.area() + b.area() - inter;
    return uni <= 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double iou_pixel_counts(std::size_t a, std::size_t b, std::size_t inter) {
    std::size_t uni = a + b - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// One pooled scoreable frame: its score map, ground-truth mask (empty image
// when the frame carries no anomaly), and the mask's connected regions.
struct EvalFrame {
    Image score_map;
    Image mask; // zero-size when no annotations
    bool positive = false;
    std::vector<DetectionRegion> gt_regions;
};

struct EvalTrack {
    int track_id = 0;
    std::vector<std::pair<std::size_t, Box>> frames; // (pooled frame index, box)
};

struct EvalInput {
    std::vector<EvalFrame> frames;
    std::vector<EvalTrack> tracks;
};

// Pools the scoreable frames (anchors 0..last-6) of every test sequence with
// their annotations; track frames outside the scoreable range are dropped.
inline EvalInput build_eval_input(const std::vector<const ScoreVolume*>& volumes,
                                  const DatasetPartition& test) {
    if (volumes.size() != test.sequences.size())
        raise(ErrorKind::InvalidInput, "one score volume per test sequence required");
    EvalInput input;
    std::size_t base = 0;
    for (std::size_t s = 0; s < volumes.size(); ++s) {
        const ScoreVolume& vol = *volumes[s];
        const FrameSequence& seq = test.sequences[s];
        std::size_t scoreable = seq.frame_count() - (ChannelStack::kTemporalDepth - 1);
        if (vol.frame_count() != scoreable)
            raise(ErrorKind::InvalidInput, "score volume frame count does not match sequence " +
                                               seq.sequence_id);
        bool has_masks = test.has_masks(s);
        for (std::size_t f = 0; f < scoreable; ++f) {
            EvalFrame ef;
            ef.score_map = vol.maps[f];
            if (has_masks) {
                ef.mask = test.pixel_masks[s][f];
                ef.gt_regions = connected_components(ef.mask, 0.5);
                ef.positive = !ef.gt_regions.empty();
            }
            input.frames.push_back(std::move(ef));
        }
        if (s < test.track_boxes.size()) {
            std::map<int, EvalTrack> by_id;
            for (const auto& tb : test.track_boxes[s]) {
                if (static_cast<std::size_t>(tb.frame) >= scoreable) continue;
                auto& tr = by_id[tb.track_id];
                tr.track_id = tb.track_id;
                tr.frames.push_back({base + static_cast<std::size_t>(tb.frame), tb.box});
            }
            for (auto& [id, tr] : by_id)
                if (!tr.frames.empty()) input.tracks.push_back(std::move(tr));
        }
        base += scoreable;
    }
    return input;
}

namespace roc_detail {

// ROC sweep over per-frame critical values: a frame fires at threshold tau iff
// its critical value >= tau. Points ordered by descending threshold, tied
// values collapsed into one step.
inline RocCurve sweep_criticals(const std::vector<double>& pos_criticals,
                                const std::vector<double>& neg_criticals,
                                const std::string& criterion) {
    if (pos_criticals.empty() || neg_criticals.empty())
        raise(ErrorKind::UndefinedMetric,
              criterion + ": ground truth contains a single class");
    std::vector<std::pair<double, int>> events; // (critical, is_positive)
    events.reserve(pos_criticals.size() + neg_criticals.size());
    for (double c : pos_criticals) events.push_back({c, 1});
    for (double c : neg_criticals) events.push_back({c, 0});
    std::sort(events.begin(), events.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });

    RocCurve curve;
    curve.criterion = criterion;
    double n_pos = static_cast<double>(pos_criticals.size());
    double n_neg = static_cast<double>(neg_criticals.size());
    curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::size_t tp = 0, fp = 0, i = 0;
    while (i < events.size()) {
        double v = events[i].first;
        while (i < events.size() && events[i].first == v) {
            (events[i].second == 1 ? tp : fp)++;
            ++i;
        }
        curve.points.push_back({v, static_cast<double>(fp) / n_neg, static_cast<double>(tp) / n_pos});
    }
    // trapezoidal AUC over FPR in [0, 1]
    double auc = 0.0;
    for (std::size_t k = 1; k < curve.points.size(); ++k)
        auc += 0.5 * (curve.points[k].tpr + curve.points[k - 1].tpr) *
               (curve.points[k].x - curve.points[k - 1].x);
    // the sweep may end before FPR 1 only if some negatives never fire; they
    // do fire at the minimum, so the last point is always (1, 1) here
    curve.auc = auc;
    // EER: crossing of tpr = 1 - fpr, linearly interpolated
    for (std::size_t k = 1; k < curve.points.size(); ++k) {
        double d0 = curve.points[k - 1].tpr + curve.points[k - 1].x - 1.0;
        double d1 = curve.points[k].tpr + curve.points[k].x - 1.0;
        if (d1 < 0.0) continue;
        double df = curve.points[k].x - curve.points[k - 1].x;
        double dt = curve.points[k].tpr - curve.points[k - 1].tpr;
        double denom = dt + df;
        double lambda = denom == 0.0 ? 0.0 : (0.0 - d0) / denom;
        curve.eer = curve.points[k - 1].x + lambda * df;
        break;
    }
    return curve;
}

} // namespace roc_detail

// Frame-level criterion: a frame is positive iff its mask is nonempty; the
// frame score is its maximum pixel score.
inline RocCurve frame_level_roc(const EvalInput& input) {
    std::vector<double> pos, neg;
    for (const auto& f : input.frames) {
        double best = 0.0;
        for (int y = 0; y < f.score_map.height(); ++y)
            for (int x = 0; x < f.score_map.width(); ++x)
                best = std::max(best, static_cast<double>(f.score_map.at(x, y)));
        (f.positive ? pos : neg).push_back(best);
    }
    return roc_detail::sweep_criticals(pos, neg, "frame_level");
}

// Pixel-level criterion: a positive frame is detected iff detections cover at
// least coverage_min of its anomalous pixels; a negative frame is a false
// positive iff any pixel fires.
inline RocCurve pixel_level_roc(const EvalInput& input, double coverage_min = 0.4) {
    std::vector<double> pos, neg;
    for (const auto& f : input.frames) {
        double best = 0.0;
        for (int y = 0; y < f.score_map.height(); ++y)
            for (int x = 0; x < f.score_map.width(); ++x)
                best = std::max(best, static_cast<double>(f.score_map.at(x, y)));
        if (!f.positive) {
            neg.push_back(best);
            continue;
        }
        std::vector<double> masked_scores;
        for (int y = 0; y < f.mask.height(); ++y)
            for (int x = 0; x < f.mask.width(); ++x)
                if (f.mask.at(x, y) > 0.0f)
                    masked_scores.push_back(static_cast<double>(f.score_map.at(x, y)));
        std::size_t m = masked_scores.size();
        auto k = static_cast<std::ptrdiff_t>(
            std::ceil(coverage_min * static_cast<double>(m) - 1e-9));
        if (k <= 0) {
            pos.push_back(std::numeric_limits<double>::infinity());
            continue;
        }
        // frame detected at tau iff at least k masked pixels have score >= tau,
        // i.e. tau <= k-th largest masked score
        std::nth_element(masked_scores.begin(), masked_scores.begin() + (k - 1), masked_scores.end(),
                         std::greater<double>());
        pos.push_back(masked_scores[static_cast<std::size_t>(k - 1)]);
    }
    return roc_detail::sweep_criticals(pos, neg, "pixel_level");
}

struct RegionTrackOptions {
    double iou_min = 0.1;
    double track_fraction_min = 0.1;
    std::vector<double> thresholds; // descending; empty = all distinct pixel values
};

// All distinct pixel values descending, optionally thinned to max_count
// (endpoints kept).
inline std::vector<double> collect_thresholds(const EvalInput& input, std::size_t max_count = 0) {
    std::set<double, std::greater<double>> values;
    for (const auto& f : input.frames)
        for (int y = 0; y < f.score_map.height(); ++y)
            for (int x = 0; x < f.score_map.width(); ++x)
                values.insert(static_cast<double>(f.score_map.at(x, y)));
    std::vector<double> out(values.begin(), values.end());
    if (max_count > 1 && out.size() > max_count) {
        std::vector<double> thin;
        thin.reserve(max_count);
        for (std::size_t i = 0; i < max_count; ++i) {
            std::size_t j = i * (out.size() - 1) / (max_count - 1);
            thin.push_back(out[j]);
        }
        thin.erase(std::unique(thin.begin(), thin.end()), thin.end());
        out = std::move(thin);
    }
    return out;
}

namespace roc_detail {

struct FrameMatchResult {
    std::size_t tp_regions = 0;
    std::size_t fp_detections = 0;
    std::vector<char> det_matched_gt; // per detection
};

// Pixel-set IOU matching between detections and GT regions of one frame.
// A detection may validate several GT regions and vice versa.
inline FrameMatchResult match_frame(const std::vector<DetectionRegion>& dets,
                                    const std::vector<DetectionRegion>& gts, int w, int h,
                                    double iou_min) {
    FrameMatchResult res;
    res.det_matched_gt.assign(dets.size(), 0);
    if (dets.empty()) return res;
    std::vector<int> label(static_cast<std::size_t>(w) * h, -1);
    for (std::size_t d = 0; d < dets.size(); ++d)
        for (auto [x, y] : dets[d].pixels) label[static_cast<std::size_t>(y) * w + x] = static_cast<int>(d);
    for (const auto& gt : gts) {
        std::map<int, std::size_t> inter;
        for (auto [x, y] : gt.pixels) {
            int d = label[static_cast<std::size_t>(y) * w + x];
            if (d >= 0) inter[d]++;
        }
        bool matched = false;
        for (const auto& [d, cnt] : inter) {
            double iou = iou_pixel_counts(dets[static_cast<std::size_t>(d)].pixels.size(),
                                          gt.pixels.size(), cnt);
            if (iou + 1e-12 >= iou_min) {
                matched = true;
                res.det_matched_gt[static_cast<std::size_t>(d)] = 1;
            }
        }
        if (matched) res.tp_regions++;
    }
    for (char m : res.det_matched_gt)
        if (!m) res.fp_detections++;
    return res;
}

inline void sort_and_integrate_fppf(RocCurve& curve) {
    std::stable_sort(curve.points.begin(), curve.points.end(), [](const RocPoint& a, const RocPoint& b) {
        return a.x != b.x ? a.x < b.x : a.tpr < b.tpr;
    });
    double auc = 0.0;
    bool reached_one = false;
    for (std::size_t k = 1; k < curve.points.size(); ++k) {
        double x0 = curve.points[k - 1].x, t0 = curve.points[k - 1].tpr;
        double x1 = curve.points[k].x, t1 = curve.points[k].tpr;
        if (x0 >= 1.0) {
            reached_one = true;
            break;
        }
        if (x1 > 1.0) {
            double t_at_one = t0 + (t1 - t0) * (1.0 - x0) / (x1 - x0);
            auc += 0.5 * (t0 + t_at_one) * (1.0 - x0);
            reached_one = true;
            break;
        }
        auc += 0.5 * (t0 + t1) * (x1 - x0);
    }
    if (!reached_one && !curve.points.empty()) {
        const RocPoint& last = curve.points.back();
        if (last.x < 1.0) auc += last.tpr * (1.0 - last.x); // extend horizontally
    }
    curve.auc = auc;
}

} // namespace roc_detail

// Region-based criterion: per threshold, a GT region is detected iff some
// detection overlaps it with IOU >= iou_min; detections matching nothing are
// false positives. TPR vs false positives per frame, AUC over FPPF [0, 1].
inline RocCurve region_based_roc(const EvalInput& input, const RegionTrackOptions& opts = {}) {
    std::size_t total_gt = 0;
    for (const auto& f : input.frames) total_gt += f.gt_regions.size();
    if (total_gt == 0) raise(ErrorKind::UndefinedMetric, "region_based: no ground-truth regions");

    std::vector<double> thresholds =
        opts.thresholds.empty() ? collect_thresholds(input) : opts.thresholds;
    RocCurve curve;
    curve.criterion = "region_based";
    curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    double n_frames = static_cast<double>(input.frames.size());
    for (double tau : thresholds) {
        std::size_t tp = 0, fp = 0;
        for (const auto& f : input.frames) {
            auto dets = connected_components(f.score_map, tau);
            auto res = roc_detail::match_frame(dets, f.gt_regions, f.score_map.width(),
                                               f.score_map.height(), opts.iou_min);
            tp += res.tp_regions;
            fp += res.fp_detections;
        }
        curve.points.push_back({tau, static_cast<double>(fp) / n_frames,
                                static_cast<double>(tp) / static_cast<double>(total_gt)});
    }
    roc_detail::sort_and_integrate_fppf(curve);
    return curve;
}

// Track-based criterion: a track is detected iff at least track_fraction_min
// of its frames have its box matched at IOU >= iou_min (rectangle IOU against
// detection bounding boxes); false positives counted as in the region
// criterion.
inline RocCurve track_based_roc(const EvalInput& input, const RegionTrackOptions& opts = {}) {
    if (input.tracks.empty()) raise(ErrorKind::UndefinedMetric, "track_based: no tracks");
    std::vector<double> thresholds =
        opts.thresholds.empty() ? collect_thresholds(input) : opts.thresholds;
    RocCurve curve;
    curve.criterion = "track_based";
    curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    double n_frames = static_cast<double>(input.frames.size());
    double n_tracks = static_cast<double>(input.tracks.size());
    for (double tau : thresholds) {
        std::vector<std::vector<DetectionRegion>> dets(input.frames.size());
        std::size_t fp = 0;
        for (std::size_t fi = 0; fi < input.frames.size(); ++fi) {
            const auto& f = input.frames[fi];
            dets[fi] = connected_components(f.score_map, tau);
            auto res = roc_detail::match_frame(dets[fi], f.gt_regions, f.score_map.width(),
                                               f.score_map.height(), opts.iou_min);
            fp += res.fp_detections;
        }
        std::size_t tp_tracks = 0;
        for (const auto& tr : input.tracks) {
            std::size_t matched = 0;
            for (const auto& [fi, box] : tr.frames) {
                bool hit = false;
                for (const auto& det : dets[fi])
                    if (iou_boxes(det.bbox, box) + 1e-12 >= opts.iou_min) {
                        hit = true;
                        break;
                    }
                matched += hit ? 1 : 0;
            }
            double needed = opts.track_fraction_min * static_cast<double>(tr.frames.size());
            if (static_cast<double>(matched) + 1e-9 >= needed) ++tp_tracks;
        }
        curve.points.push_back({tau, static_cast<double>(fp) / n_frames,
                                static_cast<double>(tp_tracks) / n_tracks});
    }
    roc_detail::sort_and_integrate_fppf(curve);
    return curve;
}

// ---- exports -------------------------------------------------------------------

inline std::string roc_to_csv(const RocCurve& curve) {
    std::string out = "threshold,x,tpr\n";
    char buf[128];
    for (const auto& p : curve.points) {
        std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g\n", p.threshold, p.x, p.tpr);
        out += buf;
    }
    return out;
}

// Minimal SVG line chart for a ROC curve, axes labeled per criterion.
inline std::string roc_to_svg(const RocCurve& curve) {
    const int w = 480, h = 360, ml = 56, mb = 44, mt = 16, mr = 16;
    double x_max = 1.0;
    for (const auto& p : curve.points)
        if (std::isfinite(p.x)) x_max = std::max(x_max, p.x);
    x_max = std::min(x_max, 1.0);
    auto px = [&](double x) { return ml + x / x_max * (w - ml - mr); };
    auto py = [&](double t) { return h - mb - t * (h - mb - mt); };
    std::string xlabel = (curve.criterion == "region_based" || curve.criterion == "track_based")
                             ? "false positives per frame"
                             : "false positive rate";
    std::string svg;
    char buf[256];
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"360\" "
           "viewBox=\"0 0 480 360\">\n";
    svg += "<rect width=\"480\" height=\"360\" fill=\"white\"/>\n";
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", ml, h - mb,
                  w - mr, h - mb);
    svg += buf;
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", ml, mt, ml,
                  h - mb);
    svg += buf;
    svg += "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"1.5\" points=\"";
    for (const auto& p : curve.points) {
        double x = std::isfinite(p.x) ? std::min(p.x, x_max) : 0.0;
        std::snprintf(buf, sizeof buf, "%.1f,%.1f ", px(x), py(p.tpr));
        svg += buf;
    }
    svg += "\"/>\n";
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%d\" y=\"%d\" font-size=\"12\" text-anchor=\"middle\">%s</text>\n",
                  (ml + w - mr) / 2, h - 10, xlabel.c_str());
    svg += buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"14\" y=\"%d\" font-size=\"12\" text-anchor=\"middle\" "
                  "transform=\"rotate(-90 14 %d)\">true positive rate</text>\n",
                  (mt + h - mb) / 2, (mt + h - mb) / 2);
    svg += buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%d\" y=\"%d\" font-size=\"12\">%s (AUC %.4f)</text>\n", ml + 8, mt + 14,
                  curve.criterion.c_str(), curve.auc);
    svg += buf;
    svg += "</svg>\n";
    return svg;
}

} // namespace vad
