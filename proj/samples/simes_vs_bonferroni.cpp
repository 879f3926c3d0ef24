// Builds a small panel by hand and compares the Bonferroni and Simes batch
// prediction sets and their count bounds.

#include <iostream>
#include <vector>

#include "batchcp/batchcp.hpp"

int main()
{
    using namespace batchcp;

    std::vector<CalibrationEntry> entries;
    for (int j = 0; j < 19; ++j) entries.push_back({j % 3, (j + 0.5) / 19.0});
    const auto cal = build_calibration(entries, CalibrationMode::full, 3);

    // three test items, scores S_k(x) = 1 - P(k | x)
    const ScorePanel scores(3, 3, {0.10, 0.85, 0.95,
                                   0.55, 0.50, 0.95,
                                   0.90, 0.80, 0.30});
    const auto panel = conformal_pvalues(cal, scores);

    for (const CombinerSpec& spec : {CombinerSpec(Bonferroni{}), CombinerSpec(Simes{})}) {
        const auto set = enumerate_set(panel, spec, AlphaRule{0.2});
        const auto bounds = class_count_bounds(set);
        std::cout << to_string(spec) << ": " << set.size() << " label vectors\n";
        for (const auto& member : set.members) {
            std::cout << "  (";
            for (std::size_t i = 0; i < member.labels.size(); ++i) std::cout << (i ? "," : "") << member.labels[i];
            std::cout << ")  F = " << member.p->value << '\n';
        }
        if (!bounds.is_empty) {
            std::cout << "  count bounds:";
            for (const auto& iv : bounds.per_class) std::cout << " [" << iv.lower << ',' << iv.upper << ']';
            std::cout << '\n';
        }
    }
}
