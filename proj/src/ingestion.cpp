#include "tmagrade/ingestion.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "tmagrade/image_io.hpp"

namespace tma {
namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

[[noreturn]] void manifest_error(int line, const std::string& what) {
    throw Error("manifest line " + std::to_string(line) + ": " + what);
}

}  // namespace

std::string to_string(Cohort cohort) {
    switch (cohort) {
        case Cohort::Train: return "train";
        case Cohort::Validation: return "validation";
        case Cohort::Test: return "test";
    }
    return "train";
}

Cohort parse_cohort(const std::string& text) {
    if (text == "train") return Cohort::Train;
    if (text == "validation") return Cohort::Validation;
    if (text == "test") return Cohort::Test;
    throw Error("unknown cohort '" + text + "' (expected train, validation or test)");
}

std::map<Cohort, int> DatasetManifest::cohort_counts() const {
    std::map<Cohort, int> counts{{Cohort::Train, 0}, {Cohort::Validation, 0}, {Cohort::Test, 0}};
    for (const auto& r : records) ++counts[r.cohort];
    return counts;
}

std::vector<const CaseRecord*> DatasetManifest::cohort(Cohort c) const {
    std::vector<const CaseRecord*> out;
    for (const auto& r : records)
        if (r.cohort == c) out.push_back(&r);
    return out;
}

std::filesystem::path DatasetManifest::resolve(const std::filesystem::path& p) const {
    if (p.is_absolute() || base_dir.empty()) return p;
    return base_dir / p;
}

ClassMapping ClassMapping::default_mapping() {
    ClassMapping m;
    m.set(0, 0);
    m.set(1, 1);
    m.set(2, 1);
    m.set(3, 2);
    m.set(4, 3);
    m.set(5, 4);
    m.set(6, 5);
    return m;
}

ClassMapping ClassMapping::parse(const std::string& text) {
    ClassMapping m;
    for (const auto& item : split(text, ',')) {
        const std::string entry = trim(item);
        if (entry.empty()) continue;
        const auto colon = entry.find(':');
        if (colon == std::string::npos) throw Error("class mapping entry '" + entry + "' is not raw:code");
        try {
            m.set(std::stoi(entry.substr(0, colon)), std::stoi(entry.substr(colon + 1)));
        } catch (const std::logic_error&) {
            throw Error("class mapping entry '" + entry + "' is not numeric");
        }
    }
    return m;
}

void ClassMapping::set(int raw, int code) {
    if (raw < 0 || raw > 255) throw Error("class mapping raw value " + std::to_string(raw) + " outside 0..255");
    if (code < 0 || code >= kNumClasses)
        throw Error("class mapping code " + std::to_string(code) + " outside 0..5");
    table_[raw] = static_cast<std::uint8_t>(code);
}

std::array<std::uint8_t, kNumClasses> ClassMapping::inverse() const {
    std::array<std::optional<std::uint8_t>, kNumClasses> inv{};
    for (int raw = 0; raw < 256; ++raw)
        if (table_[raw] && !inv[*table_[raw]]) inv[*table_[raw]] = static_cast<std::uint8_t>(raw);
    std::array<std::uint8_t, kNumClasses> out{};
    for (int c = 0; c < kNumClasses; ++c) {
        if (!inv[c]) throw Error("class mapping has no raw value for code " + std::to_string(c));
        out[c] = *inv[c];
    }
    return out;
}

bool ClassMapping::is_bijective() const {
    std::array<int, kNumClasses> hits{};
    for (const auto& v : table_)
        if (v) ++hits[*v];
    for (int h : hits)
        if (h != 1) return false;
    return true;
}

std::string ClassMapping::to_string() const {
    std::string out;
    for (int raw = 0; raw < 256; ++raw) {
        if (!table_[raw]) continue;
        if (!out.empty()) out += ',';
        out += std::to_string(raw) + ':' + std::to_string(*table_[raw]);
    }
    return out;
}

UnmappedValueError::UnmappedValueError(int v, int yy, int xx)
    : Error("unmapped raw mask value " + std::to_string(v) + " at (" + std::to_string(yy) + ", " +
            std::to_string(xx) + ")"),
      value(v), y(yy), x(xx) {}

DatasetManifest parse_manifest_text(const std::string& text, const std::filesystem::path& base_dir,
                                    bool check_files) {
    DatasetManifest manifest;
    manifest.base_dir = base_dir;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    bool header_seen = false;
    std::set<std::string> ids;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
        if (trim(line).empty()) continue;
        if (!header_seen) {
            const auto cols = split(trim(line), ',');
            if (cols.size() != 4 || trim(cols[0]) != "case_id" || trim(cols[1]) != "image" ||
                trim(cols[2]) != "annotations" || trim(cols[3]) != "cohort")
                manifest_error(line_no, "expected header 'case_id,image,annotations,cohort'");
            header_seen = true;
            continue;
        }
        const auto cols = split(line, ',');
        if (cols.size() != 4)
            manifest_error(line_no, "expected 4 comma-separated fields, found " + std::to_string(cols.size()));
        CaseRecord rec;
        rec.case_id = trim(cols[0]);
        if (rec.case_id.empty()) manifest_error(line_no, "empty case_id");
        if (!ids.insert(rec.case_id).second) manifest_error(line_no, "duplicate case_id '" + rec.case_id + "'");
        rec.image_path = trim(cols[1]);
        if (rec.image_path.empty()) manifest_error(line_no, "empty image path");
        for (const auto& a : split(cols[2], ';')) {
            const auto p = trim(a);
            if (!p.empty()) rec.annotation_paths.emplace_back(p);
        }
        if (rec.annotation_paths.empty()) manifest_error(line_no, "no annotation paths");
        if (rec.annotation_paths.size() > 6)
            manifest_error(line_no, "more than 6 annotation paths (" + std::to_string(rec.annotation_paths.size()) + ")");
        try {
            rec.cohort = parse_cohort(trim(cols[3]));
        } catch (const Error& e) {
            manifest_error(line_no, e.what());
        }
        if (check_files) {
            const auto check = [&](const std::filesystem::path& p) {
                if (!std::filesystem::exists(manifest.resolve(p)))
                    manifest_error(line_no, "missing file '" + manifest.resolve(p).string() + "'");
            };
            check(rec.image_path);
            for (const auto& p : rec.annotation_paths) check(p);
        }
        manifest.records.push_back(std::move(rec));
    }
    if (!header_seen) throw Error("empty manifest");
    return manifest;
}

DatasetManifest parse_manifest(const std::filesystem::path& path, bool check_files) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open manifest '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_manifest_text(ss.str(), path.parent_path(), check_files);
}

std::string serialize_manifest(const DatasetManifest& manifest) {
    std::string out = "case_id,image,annotations,cohort\n";
    for (const auto& r : manifest.records) {
        out += r.case_id + ',' + r.image_path.string() + ',';
        for (std::size_t i = 0; i < r.annotation_paths.size(); ++i) {
            if (i) out += ';';
            out += r.annotation_paths[i].string();
        }
        out += ',' + to_string(r.cohort) + '\n';
    }
    return out;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write manifest '" + path.string() + "'");
    out << serialize_manifest(manifest);
}

LoadedCase load_case(const CaseRecord& record, const std::filesystem::path& base_dir) {
    const auto resolve = [&](const std::filesystem::path& p) {
        return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
    };
    const ImageU8 rgb = read_png_rgb(resolve(record.image_path));
    LoadedCase out;
    out.image = ImageF(rgb.height, rgb.width, 3);
    for (std::size_t i = 0; i < rgb.data.size(); ++i) out.image.data[i] = static_cast<float>(rgb.data[i]);
    for (const auto& p : record.annotation_paths) {
        RawMask m = read_png_gray(resolve(p));
        if (m.height != rgb.height || m.width != rgb.width)
            throw Error("case '" + record.case_id + "': dimension mismatch, image is " + std::to_string(rgb.height) +
                        "x" + std::to_string(rgb.width) + " but mask '" + p.string() + "' is " +
                        std::to_string(m.height) + "x" + std::to_string(m.width));
        out.masks.push_back(std::move(m));
    }
    return out;
}

GradeLabelMap apply_class_mapping(const RawMask& raw, const ClassMapping& mapping) {
    GradeLabelMap out(raw.height, raw.width);
    for (int y = 0; y < raw.height; ++y) {
        for (int x = 0; x < raw.width; ++x) {
            const auto v = mapping.lookup(raw.at(y, x));
            if (!v) throw UnmappedValueError(raw.at(y, x), y, x);
            out.at(y, x) = *v;
        }
    }
    return out;
}

RawMask invert_class_mapping(const GradeLabelMap& labels, const ClassMapping& mapping) {
    const auto inv = mapping.inverse();
    RawMask out(labels.height, labels.width);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels.data[i] >= kNumClasses) throw Error("label code out of range");
        out.data[i] = inv[labels.data[i]];
    }
    return out;
}

}  // namespace tma
