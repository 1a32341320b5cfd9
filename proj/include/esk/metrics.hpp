#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace esk {

struct EvalReport {
    int n_classes = 0;
    // confusion[truth][prediction]
    std::vector<std::vector<long>> confusion;
    double uar = 0.0;
    double macro_precision = 0.0;
    double macro_f1 = 0.0;

    long total() const;
    double accuracy() const;
    double recall(int k) const;     // NaN when class k never occurs in the truth
    double precision(int k) const;  // NaN when class k is never predicted
};

// Unweighted average recall over classes that occur in the truth; macro
// precision over classes that are predicted at least once; macro F1 over
// all classes with F1 = 0 where precision + recall = 0 or is undefined.
EvalReport evaluate(std::span<const int> y_true, std::span<const int> y_pred, int n_classes);

// CSV with the three scores followed by the confusion matrix.
void write_report(const std::filesystem::path& path, const EvalReport& report, const std::vector<std::string>& extra_lines = {});

}  // namespace esk
