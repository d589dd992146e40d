#ifndef UGSS_TESTS_SUPPORT_HPP
#define UGSS_TESTS_SUPPORT_HPP

#include <unistd.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "ugss/core_data.hpp"
#include "ugss/phantom.hpp"
#include "ugss/preprocess.hpp"
#include "ugss/rng.hpp"

namespace ugss::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("ugss_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

inline Mask random_mask(Shape3 s, double p, Rng& rng) {
    Mask m(s, 0);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = bernoulli(rng, p) ? 1 : 0;
    return m;
}

inline Mask box_mask(Shape3 s, int z0, int z1, int y0, int y1, int x0, int x1) {
    Mask m(s, 0);
    for (int z = z0; z < z1; ++z)
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) m(z, y, x) = 1;
    return m;
}

// Small phantom config used by most tests.
inline PhantomConfig small_phantom(std::uint64_t seed = 1) {
    PhantomConfig c;
    c.shape = {32, 32, 32};
    c.seed = seed;
    c.cranial_extent_jitter = 8;
    c.overannotation_max_slices = 8;
    return c;
}

inline PhantomConfig full_phantom(std::uint64_t seed = 1) {
    PhantomConfig c = small_phantom(seed);
    c.availability_probs.fill(1.0);
    return c;
}

inline ScanRecord phantom_record(const PhantomConfig& c, std::uint64_t index, bool preprocess = true) {
    ScanRecord r = generate_phantom(c, index);
    return preprocess ? preprocess_record(std::move(r)) : r;
}

// Surface voxels by direct neighbour inspection.
inline std::vector<std::array<int, 3>> brute_surface(const Mask& m) {
    const Shape3 s = m.shape();
    std::vector<std::array<int, 3>> out;
    for (int z = 0; z < s.z; ++z)
        for (int y = 0; y < s.y; ++y)
            for (int x = 0; x < s.x; ++x) {
                if (!m(z, y, x)) continue;
                bool surface = false;
                const int d[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
                for (const auto& o : d) {
                    const int zz = z + o[0], yy = y + o[1], xx = x + o[2];
                    if (zz < 0 || yy < 0 || xx < 0 || zz >= s.z || yy >= s.y || xx >= s.x || !m(zz, yy, xx)) {
                        surface = true;
                    }
                }
                if (surface) out.push_back({z, y, x});
            }
    return out;
}

inline double brute_distance(const std::array<int, 3>& a, const std::vector<std::array<int, 3>>& set, const Spacing& sp) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& b : set) {
        const double dz = (a[0] - b[0]) * sp.z, dy = (a[1] - b[1]) * sp.y, dx = (a[2] - b[2]) * sp.x;
        best = std::min(best, std::sqrt(dz * dz + dy * dy + dx * dx));
    }
    return best;
}

}  // namespace ugss::test

#endif  // UGSS_TESTS_SUPPORT_HPP
