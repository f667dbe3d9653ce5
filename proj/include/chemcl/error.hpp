//
// Project ChemCL - Copyright 2026 ChemCL Developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef CHEMCL_ERROR_HPP_
#define CHEMCL_ERROR_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace chemcl {

/// Error codes for every recoverable failure the library reports. Tests
/// match on the code, messages are for humans.
enum class errc {
  // smiles
  empty_input,
  unbalanced_parenthesis,
  unclosed_ring,
  unknown_symbol,
  vocabulary_overflow,
  // element kg
  missing_binning_spec,
  value_out_of_bins,
  unknown_entity,
  // kg embedding
  unknown_relation,
  empty_kg,
  non_positive_dim,
  vocabulary_mismatch,
  // augmentation
  empty_graph,
  unknown_element,
  // tensor core
  shape_mismatch,
  non_scalar_loss,
  detached_loss,
  missing_gradient,
  domain_error,
  // encoders
  empty_neighborhood,
  uncovered_node_type,
  empty_set,
  // contrast
  length_mismatch,
  batch_too_large,
  non_positive_temperature,
  size_mismatch,
  // pipeline
  corpus_too_small,
  config_invalid,
  protocol_unknown,
  empty_split,
  single_class,
  // io / cli
  io_error,
  usage_error,
};

class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string &msg)
      : std::runtime_error(msg), code_(code) {}

  errc code() const { return code_; }

 private:
  errc code_;
};

/// Parse failures additionally carry the byte offset of the offending input.
class ParseError : public Error {
 public:
  ParseError(errc code, std::size_t offset, const std::string &msg)
      : Error(code, msg + " (offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace chemcl

#endif  // CHEMCL_ERROR_HPP_
