#pragma once

#include "retseg/core.hpp"
#include "retseg/embed.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace retseg::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
    {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("retseg_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline Frame random_frame(Index h, Index w, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Frame f;
    f.height = h;
    f.width = w;
    f.pixels.resize(h * w, 3);
    for (Index i = 0; i < f.pixels.size(); ++i) f.pixels.data()[i] = u(rng);
    return f;
}

inline VideoTensor random_video(Index n, Index h, Index w, std::mt19937_64& rng)
{
    VideoTensor v;
    for (Index j = 0; j < n; ++j) v.frames.push_back(random_frame(h, w, rng));
    return v;
}

template <typename Scalar = double>
RowMatrix<Scalar> random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0)
{
    std::normal_distribution<double> g(0.0, scale);
    RowMatrix<Scalar> m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(g(rng));
    return m;
}

}  // namespace retseg::testing
