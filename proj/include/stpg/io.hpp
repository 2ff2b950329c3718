#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "stpg/tensor.hpp"
#include "stpg/types.hpp"

namespace stpg {

// Tensor container format:
//   magic "STPG" | version byte 0x01 | JSON header line {"dtype":..,"shape":[..]}
//   | '\n' | row-major little-endian payload.
// dtype is "f32" or "u8". Roundtrips are bit-exact.

enum class IoStatus {
    ok,
    bad_magic,
    bad_version,
    bad_header,
    shape_mismatch,
    truncated,
    trailing_data,
    zero_dim,
    io_failure,
};

struct IoError : std::runtime_error {
    IoStatus status;
    IoError(IoStatus s, const std::string& what) : std::runtime_error(what), status(s) {}
};

void write_tensor(const std::string& path, const Tensor& t);
void write_u8(const std::string& path, const std::vector<int>& shape, const std::vector<uint8_t>& v);

// expected_shape, when non-empty, is enforced and violations raise
// IoStatus::shape_mismatch.
Tensor read_tensor(const std::string& path, const std::vector<int>& expected_shape = {});
std::pair<std::vector<int>, std::vector<uint8_t>> read_u8(const std::string& path,
                                                          const std::vector<int>& expected_shape = {});

void write_label_map(const std::string& path, const LabelMap& m);
LabelMap read_label_map(const std::string& path);

void write_one_hot(const std::string& path, const OneHotMap& m);
OneHotMap read_one_hot(const std::string& path);

void write_weight_map(const std::string& path, const WeightMap& m);
WeightMap read_weight_map(const std::string& path);

}  // namespace stpg
