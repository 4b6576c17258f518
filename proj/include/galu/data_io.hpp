#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "galu/dataset.hpp"
#include "galu/experiments.hpp"
#include "galu/kernels.hpp"

namespace galu {

struct DataConfig {
    enum class Kind { BLOBS, SPIRALS, IDX };
    Kind kind = Kind::BLOBS;
    int n_train = 256;
    int n_test = 128;
    int classes = 2;
    double noise = 0.3;
    std::string images_path;
    std::string labels_path;
    std::string test_images_path;
    std::string test_labels_path;
    bool operator==(const DataConfig&) const = default;
};

/// Everything one run needs, serializable to a flat sectioned key-value file.
struct ExperimentConfig {
    ArchSpec arch;
    ModelKind model;
    InitScheme init;
    TrainConfig train;
    DataConfig data;
    std::uint64_t seed = 1;
    std::string out_dir = "runs";

    bool operator==(const ExperimentConfig&) const = default;

    std::string serialize() const;
    static ExperimentConfig parse(const std::string& text);
    static ExperimentConfig parse_file(const std::string& path);
    std::uint64_t spec_hash() const;
};

/// Materializes the train/test pair described by a config. IDX paths may be
/// relative to the GALUPATH_CACHE directory.
std::pair<Dataset, Dataset> load_config_data(const ExperimentConfig& cfg);

std::string to_hex(std::uint64_t v);

struct LedgerRow {
    std::string run_id;
    std::string subcommand;
    std::string spec_hash;
    std::uint64_t seed = 0;
    std::string permutation_id = "-";
    std::string mode;
    double test_accuracy = 0.0;
    double wall_seconds = 0.0;
};

void append_ledger(const std::string& path, const LedgerRow& row);
std::vector<LedgerRow> read_ledger(const std::string& path);

void write_gram_csv(const GramMatrix& g, const std::string& path);
GramMatrix read_gram_csv(const std::string& path);
void write_gram_binary(const GramMatrix& g, const std::string& path);
GramMatrix read_gram_binary(const std::string& path);

void write_run_json(const std::string& path, const ExperimentConfig& cfg, const RunResult& res,
                    const std::string& subcommand, const std::string& run_id);

std::string make_run_id(const ExperimentConfig& cfg, const std::string& subcommand,
                        std::uint64_t seed);

/// Exclusive ownership of an output directory while a run writes into it.
class DirLock {
public:
    explicit DirLock(const std::string& dir);
    ~DirLock();
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    std::string path_;
    bool owned_ = false;
};

}  // namespace galu
