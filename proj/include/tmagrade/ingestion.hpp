#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tmagrade/types.hpp"

namespace tma {

enum class Cohort { Train, Validation, Test };

std::string to_string(Cohort cohort);
Cohort parse_cohort(const std::string& text);

struct CaseRecord {
    std::string case_id;
    std::filesystem::path image_path;
    std::vector<std::filesystem::path> annotation_paths;
    Cohort cohort = Cohort::Train;

    bool operator==(const CaseRecord&) const = default;
};

struct DatasetManifest {
    std::vector<CaseRecord> records;
    // Directory relative paths are resolved against (the manifest's directory).
    std::filesystem::path base_dir;

    std::map<Cohort, int> cohort_counts() const;
    std::vector<const CaseRecord*> cohort(Cohort c) const;
    std::filesystem::path resolve(const std::filesystem::path& p) const;
};

/// Raw mask pixel value (0..255) to grade code. Unmapped values are a load error.
class ClassMapping {
public:
    ClassMapping() = default;

    /// {0→0, 1→1, 2→1, 3→2, 4→3, 5→4, 6→5}: raw grades 1 and 2 both fall under
    /// "lower than 3".
    static ClassMapping default_mapping();
    /// Parses "raw:code,raw:code,...".
    static ClassMapping parse(const std::string& text);

    void set(int raw, int code);
    std::optional<std::uint8_t> lookup(std::uint8_t raw) const { return table_[raw]; }

    /// Smallest raw value mapped to each code; used when writing grade maps back out.
    std::array<std::uint8_t, kNumClasses> inverse() const;
    bool is_bijective() const;
    std::string to_string() const;

private:
    std::array<std::optional<std::uint8_t>, 256> table_{};
};

class UnmappedValueError : public Error {
public:
    UnmappedValueError(int value, int y, int x);
    int value;
    int y;
    int x;
};

DatasetManifest parse_manifest(const std::filesystem::path& path, bool check_files = true);
DatasetManifest parse_manifest_text(const std::string& text, const std::filesystem::path& base_dir,
                                    bool check_files = false);
std::string serialize_manifest(const DatasetManifest& manifest);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

struct LoadedCase {
    ImageF image;  // intensities in [0, 255]
    std::vector<RawMask> masks;
};

LoadedCase load_case(const CaseRecord& record, const std::filesystem::path& base_dir = {});

GradeLabelMap apply_class_mapping(const RawMask& raw, const ClassMapping& mapping);
RawMask invert_class_mapping(const GradeLabelMap& labels, const ClassMapping& mapping);

}  // namespace tma
