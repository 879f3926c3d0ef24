// Counting the label vectors allowed by a set of per-class count bounds, and
// tightening a Bonferroni product with those bounds.

#include <iostream>
#include <vector>

#include "batchcp/batchcp.hpp"

int main()
{
    using namespace batchcp;

    // m = 5 digits, K = 10 classes
    CountBounds digits{5, 10, {{1, 2}, {0, 0}, {0, 0}, {0, 0}, {1, 1}, {0, 2}, {0, 2}, {0, 0}, {0, 1}, {0, 0}}, false};
    std::cout << "vectors compatible with the digit bounds: " << reconstruct_cardinality(digits) << '\n';

    // m = 10 images, K = 3; item 8 is surely class 3, the rest are open
    std::vector<std::vector<int>> individual(10, {0, 1, 2});
    individual[7] = {2};
    CountBounds animals{10, 3, {{0, 8}, {0, 9}, {1, 10}}, false};
    const auto filtered = conservative_set_filter(animals, individual);
    std::cout << "Bonferroni product size: " << candidate_count(individual) << '\n'
              << "after the count bounds:  " << filtered.size() << '\n';
}
