#pragma once

#include "stilt/datasets.hpp"
#include "stilt/sweep.hpp"
#include "stilt/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace stilt::testing {

/// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "stilt");
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// The ~5 MB topic corpus, generated on first use.
std::filesystem::path corpus_path(const std::filesystem::path& dir);

inline constexpr std::size_t kCorpusDocuments = 2300;
inline constexpr std::size_t kIntermediateDocs = 1840;  // documents [0, 1840) feed the intermediate task

/// Desk-scale datasets for one macro seed: a 5000-example synthesized
/// intermediate task and a 160-example real-fake target with a held-out dev
/// set, both drawn from disjoint documents. The generator is trained on the
/// intermediate documents only.
struct DeskData {
    std::filesystem::path intermediate;
    std::filesystem::path target_train;
    std::filesystem::path target_dev;
};

DeskData desk_data(const std::filesystem::path& dir, int macro_seed);

inline constexpr std::uint32_t kDeskFeatureDim = 1u << 16;
inline constexpr std::size_t kDeskIntermediateEpochs = 10;

/// Paper grid over the desk data; with_intermediate toggles the STILT arm.
SweepSpec desk_spec(const DeskData& data, const std::filesystem::path& ledger, bool with_intermediate);

/// Random multiple-choice dataset with unicode content.
McDataset random_dataset(std::uint64_t seed, std::size_t examples, std::size_t options = 4);

/// Max relative error between analytic and central-difference gradients
/// over every weight of a random D x H model on n random examples.
struct GradientCheck {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
};
GradientCheck gradient_check(std::uint32_t feature_dim, std::uint32_t hidden_dim, std::size_t examples,
                             std::uint64_t seed, double h = 1e-4);

}  // namespace stilt::testing
