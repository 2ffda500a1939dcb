#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dyncfg/image.hpp"
#include "dyncfg/isa.hpp"

namespace dyncfg {

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error("IoError: " + what) {}
};

struct GroundTruth {
    std::string benchmark;
    std::string mechanism;
    std::vector<std::string> expected_libraries;
    std::size_t expected_min_objects = 0;

    nlohmann::json to_json() const;
    static GroundTruth from_json(const nlohmann::json& j);
};

// Concrete inputs under which a benchmark performs its loads.
struct Witness {
    std::map<std::string, std::string> env;
    std::vector<std::uint8_t> network;
    std::optional<std::uint64_t> time;

    nlohmann::json to_json() const;
    static Witness from_json(const nlohmann::json& j);
};

struct Benchmark {
    std::string name;
    std::string main_source;
    BinaryImage main;
    std::vector<std::pair<std::string, BinaryImage>> libs;  // file name, image
    GroundTruth truth;
    Witness witness;
};

// The 16 evaluation programs, in table order.
std::vector<Benchmark> build_suite();
// cff_dispatcher and smc_patch. Their ground truth lists no libraries.
std::vector<Benchmark> build_fixtures();

struct SuiteManifest {
    std::string dir;
    std::vector<std::string> benchmarks;
    std::vector<std::string> fixtures;

    nlohmann::json to_json() const;
};

// Writes <dir>/<name>/{main.sbf, libs/*.so, ground_truth.json, witness.json} for every
// benchmark, <dir>/fixtures/<name>/main.sbf for the fixtures, and <dir>/manifest.json.
SuiteManifest generate_suite(const std::string& out_dir);

GroundTruth load_ground_truth(const std::string& path);
Witness load_witness(const std::string& path);

// Arithmetic opcodes outside xor/add/sub used by the image's executable segments.
std::vector<Opcode> fragment_violations(const BinaryImage& img);

std::string to_hex(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> from_hex(const std::string& hex);

}  // namespace dyncfg
