#include "dips/common/params_io.hpp"

#include "dips/common/error.hpp"

#include <fmt/format.h>

#include <fstream>
#include <sstream>

namespace dips {

const ad::Matrix& ParamFile::get(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a.value;
  }
  throw DataError(fmt::format("parameter file has no array '{}'", name));
}

bool ParamFile::has(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return true;
  }
  return false;
}

void write_params(const std::string& path, const ParamFile& file) {
  std::ofstream out(path);
  if (!out) throw DataError(fmt::format("cannot open '{}' for writing", path));
  out << "format dips-params\n";
  out << "version " << kParamFormatVersion << "\n";
  for (const auto& [k, v] : file.meta) {
    if (k.find_first_of(" \t\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw InvalidArgument(fmt::format("metadata key '{}' must not contain whitespace", k));
    }
    out << "meta " << k << " " << v << "\n";
  }
  for (const auto& a : file.arrays) {
    out << "array " << a.name << " " << a.value.rows() << " " << a.value.cols() << "\n";
    for (ad::Index i = 0; i < a.value.size(); ++i) {
      if (i > 0) out << ' ';
      out << fmt::format("{:.17g}", a.value.data()[i]);
    }
    out << "\n";
  }
  out << "end\n";
  if (!out) throw DataError(fmt::format("failed writing '{}'", path));
}

ParamFile read_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open parameter file '{}'", path));
  ParamFile file;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& why) {
    throw DataError(fmt::format("{}:{}: {}", path, line_no, why));
  };
  bool saw_format = false, saw_version = false, saw_end = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "format") {
      std::string f;
      ls >> f;
      if (f != "dips-params") fail("not a dips parameter file");
      saw_format = true;
    } else if (tag == "version") {
      int v = 0;
      ls >> v;
      if (v != kParamFormatVersion) fail(fmt::format("unsupported version {}", v));
      saw_version = true;
    } else if (tag == "meta") {
      std::string k;
      ls >> k;
      std::string v;
      std::getline(ls >> std::ws, v);
      file.meta[k] = v;
    } else if (tag == "array") {
      NamedArray a;
      long rows = -1, cols = -1;
      ls >> a.name >> rows >> cols;
      if (!ls || rows < 0 || cols < 0) fail("malformed array header");
      a.value.resize(rows, cols);
      if (!std::getline(in, line)) fail("missing array values");
      ++line_no;
      std::istringstream vs(line);
      for (ad::Index i = 0; i < a.value.size(); ++i) {
        if (!(vs >> a.value.data()[i])) fail(fmt::format("array '{}' is truncated", a.name));
      }
      file.arrays.push_back(std::move(a));
    } else if (tag == "end") {
      saw_end = true;
      break;
    } else {
      fail(fmt::format("unknown record '{}'", tag));
    }
  }
  if (!saw_format || !saw_version || !saw_end) {
    throw DataError(fmt::format("{}: incomplete parameter file", path));
  }
  return file;
}

}  // namespace dips
