#include "esk/metrics.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "esk/error.hpp"
#include "esk/text.hpp"

namespace esk {

long EvalReport::total() const {
    long n = 0;
    for (const auto& row : confusion)
        for (long v : row) n += v;
    return n;
}

double EvalReport::accuracy() const {
    long correct = 0;
    for (int k = 0; k < n_classes; ++k) correct += confusion[k][k];
    const long n = total();
    return n ? double(correct) / double(n) : 0.0;
}

double EvalReport::recall(int k) const {
    long row = 0;
    for (long v : confusion[k]) row += v;
    return row ? double(confusion[k][k]) / double(row) : std::numeric_limits<double>::quiet_NaN();
}

double EvalReport::precision(int k) const {
    long col = 0;
    for (int r = 0; r < n_classes; ++r) col += confusion[r][k];
    return col ? double(confusion[k][k]) / double(col) : std::numeric_limits<double>::quiet_NaN();
}

EvalReport evaluate(std::span<const int> y_true, std::span<const int> y_pred, int n_classes) {
    if (n_classes < 1) throw Error("evaluate: need at least one class");
    if (y_true.size() != y_pred.size())
        throw Error("evaluate: " + std::to_string(y_true.size()) + " truths vs " + std::to_string(y_pred.size()) +
                    " predictions");
    if (y_true.empty()) throw Error("evaluate: no utterances");
    EvalReport r;
    r.n_classes = n_classes;
    r.confusion.assign(n_classes, std::vector<long>(n_classes, 0));
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        const int t = y_true[i], p = y_pred[i];
        if (t < 0 || t >= n_classes || p < 0 || p >= n_classes)
            throw Error("evaluate: label out of range at position " + std::to_string(i));
        ++r.confusion[t][p];
    }
    double recall_sum = 0.0, precision_sum = 0.0, f1_sum = 0.0;
    int recall_n = 0, precision_n = 0;
    for (int k = 0; k < n_classes; ++k) {
        const double rec = r.recall(k), prec = r.precision(k);
        if (!std::isnan(rec)) {
            recall_sum += rec;
            ++recall_n;
        }
        if (!std::isnan(prec)) {
            precision_sum += prec;
            ++precision_n;
        }
        const double p0 = std::isnan(prec) ? 0.0 : prec, r0 = std::isnan(rec) ? 0.0 : rec;
        f1_sum += p0 + r0 > 0 ? 2.0 * p0 * r0 / (p0 + r0) : 0.0;
    }
    r.uar = recall_n ? recall_sum / recall_n : 0.0;
    r.macro_precision = precision_n ? precision_sum / precision_n : 0.0;
    r.macro_f1 = f1_sum / n_classes;
    return r;
}

void write_report(const std::filesystem::path& path, const EvalReport& r, const std::vector<std::string>& extra_lines) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error("cannot write report '" + path.string() + "'");
    f << "metric,value\n";
    f << "uar," << format_double(r.uar) << '\n';
    f << "precision," << format_double(r.macro_precision) << '\n';
    f << "f1," << format_double(r.macro_f1) << '\n';
    f << "n," << r.total() << '\n';
    f << "confusion";
    for (int k = 0; k < r.n_classes; ++k) f << ",pred" << k;
    f << '\n';
    for (int t = 0; t < r.n_classes; ++t) {
        f << "true" << t;
        for (long v : r.confusion[t]) f << ',' << v;
        f << '\n';
    }
    for (const auto& line : extra_lines) f << line << '\n';
    if (!f) throw Error("write failed for '" + path.string() + "'");
}

}  // namespace esk
