#pragma once

// Binary checkpoint container.
//
//   WMNAV1\n
//   [{"name":..,"shape":[..],"offset":..,"byte_len":..}, ...]\n
//   \n
//   payload: little-endian float32 tensors at the stated offsets
//   crc32 of the payload, 4 bytes little-endian

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "wmnav/autodiff.hpp"

namespace wmnav {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Throws ContractError on duplicate names.
void checkpoint_write(const NamedTensors& tensors, const std::filesystem::path& path);
/// Throws MissingFileError, FormatError (magic/header), IntegrityError
/// (offset, shape or length mismatch naming the tensor) and ChecksumError.
NamedTensors checkpoint_read(const std::filesystem::path& path);

NamedTensors snapshot(const std::vector<Parameter*>& params);
/// Copies tensors into parameters by name. Every parameter must be present
/// with an identical shape; otherwise IntegrityError naming the tensor.
void restore(const NamedTensors& tensors, const std::vector<Parameter*>& params);
/// Looks up a tensor by name; IntegrityError if absent.
const Tensor& find_tensor(const NamedTensors& tensors, const std::string& name);
bool has_tensor(const NamedTensors& tensors, const std::string& name);

}  // namespace wmnav
