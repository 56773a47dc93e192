// Flat-text parameter files: named arrays with shapes plus string metadata.
//
//   format dips-params
//   version 1
//   meta <key> <value>            (zero or more)
//   array <name> <rows> <cols>    (zero or more, each followed by one line of
//   <rows*cols values, row-major>  values printed with 17 significant digits)
//   end
#pragma once

#include "dips/ad/tensor.hpp"

#include <map>
#include <string>
#include <vector>

namespace dips {

struct NamedArray {
  std::string name;
  ad::Matrix value;
};

struct ParamFile {
  std::map<std::string, std::string> meta;
  std::vector<NamedArray> arrays;

  const ad::Matrix& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

inline constexpr int kParamFormatVersion = 1;

void write_params(const std::string& path, const ParamFile& file);
ParamFile read_params(const std::string& path);

}  // namespace dips
