#pragma once

#include <chrono>
#include <filesystem>
#include <string>

#include <exchanger/random.hpp>

namespace testsupport {

// Unique scratch directory under the system temp root, removed on
// destruction.
struct TmpDir {
    std::filesystem::path path;

    explicit TmpDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        exchanger::Rng rng(exchanger::mix_seed(
            static_cast<std::uint64_t>(
                std::chrono::steady_clock::now().time_since_epoch().count()),
            ++counter));
        path = std::filesystem::temp_directory_path() /
               ("exchanger_test_" + tag + "_" + std::to_string(rng.next_u64() & 0xffffff));
        std::filesystem::create_directories(path);
    }

    ~TmpDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }

    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace testsupport
