#include "srco/common.hpp"

#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace srco {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::StackUnderflow: return "StackUnderflow";
    case ErrorCode::LeftoverOperands: return "LeftoverOperands";
    case ErrorCode::UnknownToken: return "UnknownToken";
    case ErrorCode::ContainsRawConstant: return "ContainsRawConstant";
    case ErrorCode::ArityMismatch: return "ArityMismatch";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::AllSamplesNonFinite: return "AllSamplesNonFinite";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::ZeroTargetVariance: return "ZeroTargetVariance";
    case ErrorCode::NegativeInput: return "NegativeInput";
    case ErrorCode::NonFiniteTarget: return "NonFiniteTarget";
    case ErrorCode::MissingTarget: return "MissingTarget";
    case ErrorCode::NonNumericCell: return "NonNumericCell";
    case ErrorCode::EmptyFile: return "EmptyFile";
    case ErrorCode::CorpusTooSmall: return "CorpusTooSmall";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::SequenceTooLong: return "SequenceTooLong";
    case ErrorCode::VocabMismatch: return "VocabMismatch";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::DeadEnd: return "DeadEnd";
    case ErrorCode::EmptyPool: return "EmptyPool";
    case ErrorCode::AllRestartsNonFinite: return "AllRestartsNonFinite";
    case ErrorCode::NoFeasibleCandidate: return "NoFeasibleCandidate";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "UnknownError";
}

std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

void atomic_write_file(const std::string& path, const std::string& contents) {
  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
  }
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) fail(ErrorCode::IoError, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) fail(ErrorCode::IoError, "rename " + tmp.string() + " -> " + path + ": " + ec.message());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

uint64_t file_checksum(const std::string& path) {
  std::string bytes = read_file(path);
  return fnv1a64_bytes(bytes.data(), bytes.size());
}

}  // namespace srco
