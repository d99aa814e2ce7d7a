#include "vigeo/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "vigeo/io.hpp"

namespace vigeo::metrics {

std::string align_kind_name(AlignKind k) {
    switch (k) {
        case AlignKind::none: return "none";
        case AlignKind::scale_seq: return "scale-seq";
        case AlignKind::affine: return "affine";
    }
    throw ShapeError("unknown alignment kind");
}

double median(std::vector<double> values) {
    if (values.empty()) throw ContractError("median of an empty set");
    const size_t k = (values.size() - 1) / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k),
                     values.end());
    return values[k];
}

namespace {

void check_mask(const Tensor& pred, const Tensor& gt, const MaskTensor& mask) {
    if (pred.dims() != gt.dims()) throw ShapeError("metrics: pred/gt shape mismatch");
    if (mask.dims() != pred.dims()) throw ShapeError("metrics: mask shape mismatch");
}

}  // namespace

double align_scale_seq(const Tensor& pred_depth, const Tensor& gt_depth,
                       const MaskTensor& mask) {
    check_mask(pred_depth, gt_depth, mask);
    std::vector<double> ratios;
    for (int64_t i = 0; i < pred_depth.numel(); ++i) {
        if (!mask[i]) continue;
        const double p = pred_depth[i];
        if (p == 0.0) continue;
        ratios.push_back(static_cast<double>(gt_depth[i]) / p);
    }
    if (ratios.empty()) throw ContractError("align_scale_seq: no usable pixels");
    return median(std::move(ratios));
}

double align_scale_seq_points(const Tensor& pred_points, const Tensor& gt_points,
                              const MaskTensor& mask) {
    if (pred_points.rank() != 4 || pred_points.dim(1) != 3)
        throw ShapeError("align_scale_seq_points: expected [N x 3 x H x W]");
    if (pred_points.dims() != gt_points.dims())
        throw ShapeError("align_scale_seq_points: pred/gt shape mismatch");
    const int64_t n = pred_points.dim(0), h = pred_points.dim(2), w = pred_points.dim(3);
    if (mask.rank() != 3 || mask.dim(0) != n || mask.dim(1) != h || mask.dim(2) != w)
        throw ShapeError("align_scale_seq_points: mask shape mismatch");
    std::vector<double> ratios;
    for (int64_t f = 0; f < n; ++f)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                if (!mask[(f * h + y) * w + x]) continue;
                double pn = 0.0, gn = 0.0;
                for (int64_t c = 0; c < 3; ++c) {
                    const double p = pred_points[((f * 3 + c) * h + y) * w + x];
                    const double g = gt_points[((f * 3 + c) * h + y) * w + x];
                    pn += p * p;
                    gn += g * g;
                }
                if (pn == 0.0) continue;
                ratios.push_back(std::sqrt(gn) / std::sqrt(pn));
            }
    if (ratios.empty()) throw ContractError("align_scale_seq_points: no usable pixels");
    return median(std::move(ratios));
}

AffineFit align_affine(const Tensor& pred_depth, const Tensor& gt_depth,
                       const MaskTensor& mask) {
    check_mask(pred_depth, gt_depth, mask);
    double sxx = 0, sx = 0, sxy = 0, sy = 0, cnt = 0;
    for (int64_t i = 0; i < pred_depth.numel(); ++i) {
        if (!mask[i]) continue;
        const double x = pred_depth[i], y = gt_depth[i];
        sxx += x * x;
        sx += x;
        sxy += x * y;
        sy += y;
        cnt += 1;
    }
    if (cnt < 2) throw ContractError("align_affine: needs at least 2 valid pixels");
    const double det = sxx * cnt - sx * sx;
    if (std::abs(det) < 1e-12 * std::max(1.0, sxx * cnt))
        throw ContractError("align_affine: constant prediction, fit is degenerate");
    AffineFit f;
    f.a = (sxy * cnt - sx * sy) / det;
    f.b = (sxx * sy - sx * sxy) / det;
    return f;
}

DepthMetrics depth_metrics(const Tensor& pred, const Tensor& gt, const MaskTensor& mask,
                           double s) {
    check_mask(pred, gt, mask);
    DepthMetrics out;
    double rel_sum = 0.0;
    int64_t delta_hits = 0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
        if (!mask[i]) continue;
        const double d = s * static_cast<double>(pred[i]);
        const double g = gt[i];
        if (!(g > 0.0)) throw ContractError("depth_metrics: non-positive gt depth");
        rel_sum += std::abs(d - g) / g;
        if (std::max(d / g, g / d) < 1.25) ++delta_hits;
        ++out.count;
    }
    if (out.count == 0) throw ContractError("depth_metrics: empty mask");
    out.rel = rel_sum / static_cast<double>(out.count);
    out.delta1 = static_cast<double>(delta_hits) / static_cast<double>(out.count);
    return out;
}

PointmapMetrics pointmap_metrics(const Tensor& pred_points, const Tensor& gt_points,
                                 const MaskTensor& mask, double s) {
    if (pred_points.rank() != 4 || pred_points.dim(1) != 3)
        throw ShapeError("pointmap_metrics: expected [N x 3 x H x W]");
    if (pred_points.dims() != gt_points.dims())
        throw ShapeError("pointmap_metrics: pred/gt shape mismatch");
    const int64_t n = pred_points.dim(0), h = pred_points.dim(2), w = pred_points.dim(3);
    if (mask.rank() != 3 || mask.dim(0) != n || mask.dim(1) != h || mask.dim(2) != w)
        throw ShapeError("pointmap_metrics: mask shape mismatch");
    PointmapMetrics out;
    double rel_sum = 0.0;
    int64_t delta_hits = 0;
    for (int64_t f = 0; f < n; ++f)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                if (!mask[(f * h + y) * w + x]) continue;
                double diff2 = 0.0, gn2 = 0.0;
                for (int64_t c = 0; c < 3; ++c) {
                    const double p = pred_points[((f * 3 + c) * h + y) * w + x];
                    const double g = gt_points[((f * 3 + c) * h + y) * w + x];
                    diff2 += (s * p - g) * (s * p - g);
                    gn2 += g * g;
                }
                if (gn2 == 0.0) {
                    ++out.excluded;
                    continue;
                }
                const double ratio = std::sqrt(diff2) / std::sqrt(gn2);
                rel_sum += ratio;
                if (ratio < 0.25) ++delta_hits;
                ++out.count;
            }
    if (out.count == 0) throw ContractError("pointmap_metrics: empty mask");
    out.rel_p = rel_sum / static_cast<double>(out.count);
    out.delta_p_025 = static_cast<double>(delta_hits) / static_cast<double>(out.count);
    return out;
}

NormalMetrics normal_metrics(const Tensor& pred_normals, const Tensor& gt_normals,
                             const MaskTensor& mask) {
    if (pred_normals.rank() != 4 || pred_normals.dim(1) != 3)
        throw ShapeError("normal_metrics: expected [N x 3 x H x W]");
    if (pred_normals.dims() != gt_normals.dims())
        throw ShapeError("normal_metrics: pred/gt shape mismatch");
    const int64_t n = pred_normals.dim(0), h = pred_normals.dim(2), w = pred_normals.dim(3);
    if (mask.rank() != 3 || mask.dim(0) != n || mask.dim(1) != h || mask.dim(2) != w)
        throw ShapeError("normal_metrics: mask shape mismatch");
    NormalMetrics out;
    std::vector<double> angles;
    for (int64_t f = 0; f < n; ++f)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                if (!mask[(f * h + y) * w + x]) continue;
                double p[3], g[3];
                for (int64_t c = 0; c < 3; ++c) {
                    p[c] = pred_normals[((f * 3 + c) * h + y) * w + x];
                    g[c] = gt_normals[((f * 3 + c) * h + y) * w + x];
                }
                const double pn = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
                const double gn = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
                if (pn == 0.0 || gn == 0.0) continue;
                const double cos_raw =
                    std::clamp((p[0] * g[0] + p[1] * g[1] + p[2] * g[2]) / (pn * gn), -1.0,
                               1.0);
                angles.push_back(std::acos(cos_raw) * 180.0 / M_PI);
            }
    if (angles.empty()) throw ContractError("normal_metrics: empty mask");
    out.count = static_cast<int64_t>(angles.size());
    double sum = 0.0;
    int64_t hits = 0;
    for (double a : angles) {
        sum += a;
        if (a < 11.25) ++hits;
    }
    out.mean_deg = sum / static_cast<double>(out.count);
    out.delta_1125 = static_cast<double>(hits) / static_cast<double>(out.count);
    out.median_deg = median(std::move(angles));
    return out;
}

void save_reports_csv(const std::string& path, const std::vector<MetricReport>& sequences,
                      const MetricReport& aggregate) {
    io::CsvWriter csv({"sequence", "alignment", "rel", "delta1", "rel_p", "delta_p_025",
                       "n_mean_deg", "n_med_deg", "delta_1125", "valid_count"});
    auto cell = [](const std::optional<double>& v) {
        return v ? io::format_double(*v) : std::string("");
    };
    auto add = [&](const std::string& name, const MetricReport& r) {
        csv.add_row({name, align_kind_name(r.alignment), cell(r.rel), cell(r.delta1),
                     cell(r.rel_p), cell(r.delta_p_025), cell(r.normal_mean_deg),
                     cell(r.normal_median_deg), cell(r.delta_1125),
                     std::to_string(r.valid_count)});
    };
    for (size_t i = 0; i < sequences.size(); ++i)
        add("seq" + std::to_string(i), sequences[i]);
    add("aggregate", aggregate);
    csv.save(path);
}

}  // namespace vigeo::metrics
