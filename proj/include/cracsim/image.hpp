#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cracsim/snapshot.hpp"

namespace cracsim {

// On-disk checkpoint image. All integers little-endian. Layout:
//   header:  magic "CRACSIM1" (8 bytes), version u32, section_count u32
//   section: tag u32, reserved u32 (zero), length u64, payload, crc u32
// Tags 1..7 appear exactly once, ascending. The crc is CRC-32 (IEEE) of the
// payload. File size is exactly 16 + sum(16 + length + 4).
// This defines the image format. Do not change without bumping the version.

inline constexpr char kImageMagic[8] = {'C', 'R', 'A', 'C', 'S', 'I', 'M', '1'};
inline constexpr char kCompressedMagic[8] = {'C', 'R', 'A', 'C', 'S', 'I', 'M', 'Z'};
inline constexpr uint32_t kImageVersion = 1;

enum class SectionTag : uint32_t {
  Meta = 1,
  Log = 2,
  AllocPayloads = 3,
  UvmPages = 4,
  Streams = 5,
  AppState = 6,
  KernelRegistry = 7,
};

inline constexpr uint32_t kSectionCount = 7;

constexpr const char* section_tag_name(SectionTag t) {
  switch (t) {
    case SectionTag::Meta: return "META";
    case SectionTag::Log: return "LOG";
    case SectionTag::AllocPayloads: return "ALLOC_PAYLOADS";
    case SectionTag::UvmPages: return "UVM_PAGES";
    case SectionTag::Streams: return "STREAMS";
    case SectionTag::AppState: return "APPSTATE";
    case SectionTag::KernelRegistry: return "KERNEL_REGISTRY";
  }
  return "?";
}

// Fixed-width log record inside the LOG section:
//   seq u64, op u8, kind u8, pad u16 (zero), size u64, id u64, address u64
inline constexpr size_t kLogRecordBytes = 36;

std::vector<uint8_t> encode_image(const Snapshot& snapshot);

// Strict decoder: checksums, tag order, framing arithmetic, and cross-section
// consistency (payload keys equal the log's active set; page counts match
// sizes; streams match the log) are all enforced. Any violation raises
// ImageCorrupt; there is no partial decode.
Snapshot decode_image(std::span<const uint8_t> bytes);

// Optional whole-file wrapper: magic "CRACSIMZ", raw length u64, deflate
// stream. decode_image accepts both forms and decoded content is identical.
std::vector<uint8_t> compress_image(std::span<const uint8_t> image);
bool is_compressed_image(std::span<const uint8_t> bytes);

struct SectionSummary {
  SectionTag tag;
  uint64_t length = 0;
  uint32_t crc = 0;
};

// Header/section facts for `inspect`; validates exactly like decode_image.
struct ImageSummary {
  uint32_t version = 0;
  bool was_compressed = false;
  std::vector<SectionSummary> sections;
  uint64_t log_entries = 0;
  uint64_t active_allocations = 0;
  uint64_t payload_bytes = 0;   // ALLOC_PAYLOADS content bytes, framing excluded
  uint64_t uvm_page_bytes = 0;  // UVM_PAGES content bytes, framing excluded
  uint64_t file_bytes = 0;
};

ImageSummary summarize_image(std::span<const uint8_t> bytes);

void write_image_file(const std::filesystem::path& path, const Snapshot& snapshot,
                      bool compress = false);
Snapshot read_image_file(const std::filesystem::path& path);
std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace cracsim
