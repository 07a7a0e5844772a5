#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>

#include "t2iopt/common.hpp"

namespace t2i {

enum class Provenance { Http, Synthetic };

// Content-addressed handle to stored image bytes. The only image handle that
// crosses module boundaries.
struct ImageRef {
    std::string content_hash;  // sha256 hex of the bytes
    std::string media_type = "image/png";
    std::size_t byte_length = 0;
    Provenance provenance = Provenance::Http;
    std::string prompt_id;      // generating prompt id
    std::string scene_id;       // SceneSpec id, synthetic refs only

    bool valid() const { return !content_hash.empty() && byte_length > 0; }
};

// On-disk content-addressed blob store under <root>/images/.
class ArtifactStore {
public:
    explicit ArtifactStore(std::filesystem::path root);

    ImageRef put(std::string_view bytes, std::string media_type, Provenance prov,
                 std::string prompt_id, std::string scene_id = {});
    std::string resolve(const ImageRef& ref) const;  // throws if missing or hash mismatch
    bool contains(const std::string& content_hash) const;

    const std::filesystem::path& root() const { return root_; }

private:
    std::filesystem::path path_for(const std::string& hash) const;

    std::filesystem::path root_;
    mutable std::mutex mu_;
};

}  // namespace t2i
