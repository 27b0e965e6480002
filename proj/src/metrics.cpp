#include "dgcn/metrics.hpp"

#include <cstdio>

namespace dgcn {

namespace {
std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}
}  // namespace

std::string trace_to_csv(const MetricsReport& report) {
    std::string out = "step,epoch,lr,loss,oa,miou,mf1\n";
    for (const auto& tr : report.trace) {
        out += std::to_string(tr.step) + "," + std::to_string(tr.epoch) + "," + fmt(tr.lr) + "," +
               fmt(tr.loss) + ",";
        if (tr.has_eval && !report.multilabel)
            out += fmt(tr.oa) + "," + fmt(tr.miou) + ",-\n";
        else if (tr.has_eval)
            out += "-,-," + fmt(tr.mf1) + "\n";
        else
            out += "-,-,-\n";
    }
    if (report.diverged) out += "diverged,,,,,,\n";
    return out;
}

}  // namespace dgcn
