#include "gcr/common.hpp"

namespace gcr {

std::vector<int> Rng::sample_indices(int n, int k) {
    require<ContractError>(k >= 0 && k <= n, "sample_indices: k out of range");
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    for (int i = 0; i < k; ++i) {
        const int j = i + uniform_int(n - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

Rng Rng::derive(std::uint64_t tag) const {
    return Rng(splitmix64(seed_ ^ splitmix64(tag + 0x51ed2701ULL)));
}

}  // namespace gcr
