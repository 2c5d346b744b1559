#include "ssc/metrics.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ssc {

ConfusionCounts confusion(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt,
                          int64_t num_classes) {
    if (pred.size() != gt.size())
        throw std::invalid_argument("confusion: " + std::to_string(pred.size()) +
                                    " predictions vs " + std::to_string(gt.size()) +
                                    " ground-truth entries");
    if (num_classes < 1 || num_classes > 255)
        throw std::invalid_argument("confusion: class count " + std::to_string(num_classes) +
                                    " outside [1,255]");
    ConfusionCounts cc;
    cc.num_classes = num_classes;
    cc.tp.assign(static_cast<size_t>(num_classes), 0);
    cc.fp.assign(static_cast<size_t>(num_classes), 0);
    cc.fn.assign(static_cast<size_t>(num_classes), 0);
    cc.tn.assign(static_cast<size_t>(num_classes), 0);
    for (size_t i = 0; i < gt.size(); ++i) {
        if (gt[i] == kInvalidLabel) continue;
        if (gt[i] >= num_classes)
            throw std::invalid_argument("confusion: ground-truth label " + std::to_string(gt[i]) +
                                        " at entry " + std::to_string(i) + " outside " +
                                        std::to_string(num_classes) + " classes");
        if (pred[i] >= num_classes)
            throw std::invalid_argument("confusion: predicted label " + std::to_string(pred[i]) +
                                        " at entry " + std::to_string(i) + " outside " +
                                        std::to_string(num_classes) + " classes");
        ++cc.valid_total;
        for (int64_t c = 0; c < num_classes; ++c) {
            bool p = pred[i] == c, g = gt[i] == c;
            if (p && g)
                ++cc.tp[c];
            else if (p && !g)
                ++cc.fp[c];
            else if (!p && g)
                ++cc.fn[c];
            else
                ++cc.tn[c];
        }
    }
    return cc;
}

MetricReport iou_miou(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt,
                      int64_t num_classes) {
    ConfusionCounts cc = confusion(pred, gt, num_classes);
    MetricReport r;
    r.valid_total = cc.valid_total;
    r.per_class.assign(static_cast<size_t>(num_classes), 0.0);
    r.counted.assign(static_cast<size_t>(num_classes), false);

    // occupancy: binarize to non-empty over valid entries
    int64_t otp = 0, ofp = 0, ofn = 0;
    for (size_t i = 0; i < gt.size(); ++i) {
        if (gt[i] == kInvalidLabel) continue;
        bool p = pred[i] != 0, g = gt[i] != 0;
        if (p && g)
            ++otp;
        else if (p && !g)
            ++ofp;
        else if (!p && g)
            ++ofn;
    }
    int64_t odenom = otp + ofp + ofn;
    r.iou = odenom > 0 ? static_cast<double>(otp) / static_cast<double>(odenom) : 0.0;

    double sum = 0.0;
    int64_t counted = 0;
    for (int64_t c = 0; c < num_classes; ++c) {
        int64_t denom = cc.tp[c] + cc.fp[c] + cc.fn[c];
        if (denom == 0) continue;  // absent from both prediction and truth
        r.per_class[c] = static_cast<double>(cc.tp[c]) / static_cast<double>(denom);
        r.counted[c] = true;
        if (c != 0) {
            sum += r.per_class[c];
            ++counted;
        }
    }
    r.miou = counted > 0 ? sum / static_cast<double>(counted) : 0.0;
    return r;
}

std::vector<RangeReport> range_metrics(const VoxelGrid<uint8_t>& pred,
                                       const VoxelGrid<uint8_t>& gt, int64_t num_classes,
                                       const std::vector<double>& ranges) {
    if (!(pred.spec == gt.spec))
        throw std::invalid_argument("range_metrics: prediction and ground-truth grids disagree");
    const SceneSpec& spec = pred.spec;
    int64_t X = spec.dims[0], Y = spec.dims[1], Z = spec.dims[2];

    std::vector<RangeReport> out;
    for (double range : ranges) {
        if (range <= 0.0)
            throw std::invalid_argument("range_metrics: range " + std::to_string(range) +
                                        " must be positive");
        // number of whole cells along the forward axis inside the range
        int64_t x_cells = static_cast<int64_t>(std::floor(range / spec.voxel_size + 1e-9));
        if (x_cells > X) x_cells = X;
        std::vector<uint8_t> p, g;
        p.reserve(static_cast<size_t>(x_cells * Y * Z));
        g.reserve(static_cast<size_t>(x_cells * Y * Z));
        for (int64_t x = 0; x < x_cells; ++x)
            for (int64_t y = 0; y < Y; ++y)
                for (int64_t z = 0; z < Z; ++z) {
                    size_t idx = static_cast<size_t>((x * Y + y) * Z + z);
                    p.push_back(pred.values[idx]);
                    g.push_back(gt.values[idx]);
                }
        RangeReport rr;
        rr.range_m = range;
        rr.metrics = iou_miou(p, g, num_classes);
        out.push_back(std::move(rr));
    }
    return out;
}

static void append_report(std::ostringstream& os, const MetricReport& report,
                          const std::vector<std::string>& class_names) {
    if (static_cast<int64_t>(class_names.size()) != static_cast<int64_t>(report.per_class.size()))
        throw std::invalid_argument("format_metric_report: " + std::to_string(class_names.size()) +
                                    " class names for " + std::to_string(report.per_class.size()) +
                                    " classes");
    os.setf(std::ios::fixed);
    os.precision(4);
    for (size_t c = 0; c < report.per_class.size(); ++c) {
        os << class_names[c] << " ";
        if (report.counted[c])
            os << report.per_class[c];
        else
            os << "n/a";
        os << "\n";
    }
    os << "IoU " << report.iou << "\n";
    os << "mIoU " << report.miou << "\n";
}

std::string format_metric_report(const MetricReport& report,
                                 const std::vector<std::string>& class_names) {
    std::ostringstream os;
    append_report(os, report, class_names);
    return os.str();
}

std::string format_range_reports(const std::vector<RangeReport>& reports,
                                 const std::vector<std::string>& class_names) {
    std::ostringstream os;
    for (const RangeReport& rr : reports) {
        os << "range " << rr.range_m << "\n";
        append_report(os, rr.metrics, class_names);
    }
    return os.str();
}

}  // namespace ssc
