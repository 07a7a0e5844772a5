#include "t2iopt/artifact_store.hpp"

#include <fstream>

namespace t2i {

namespace fs = std::filesystem;

ArtifactStore::ArtifactStore(fs::path root) : root_(std::move(root)) {
    fs::create_directories(root_ / "images");
}

fs::path ArtifactStore::path_for(const std::string& hash) const {
    return root_ / "images" / (hash + ".bin");
}

ImageRef ArtifactStore::put(std::string_view bytes, std::string media_type, Provenance prov,
                            std::string prompt_id, std::string scene_id) {
    if (bytes.empty()) throw PreconditionError("ArtifactStore::put: empty bytes");
    ImageRef ref;
    ref.content_hash = sha256_hex(bytes);
    ref.media_type = std::move(media_type);
    ref.byte_length = bytes.size();
    ref.provenance = prov;
    ref.prompt_id = std::move(prompt_id);
    ref.scene_id = std::move(scene_id);

    std::scoped_lock lock(mu_);
    fs::path p = path_for(ref.content_hash);
    if (!fs::exists(p)) {
        fs::path tmp = p;
        tmp += ".tmp";
        std::ofstream out(tmp, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.close();
        fs::rename(tmp, p);
    }
    return ref;
}

std::string ArtifactStore::resolve(const ImageRef& ref) const {
    std::scoped_lock lock(mu_);
    fs::path p = path_for(ref.content_hash);
    std::ifstream in(p, std::ios::binary);
    if (!in) throw PreconditionError("ArtifactStore::resolve: unknown image " + ref.content_hash);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (sha256_hex(bytes) != ref.content_hash)
        throw CorruptLog("ArtifactStore::resolve: stored bytes do not match content hash");
    return bytes;
}

bool ArtifactStore::contains(const std::string& content_hash) const {
    std::scoped_lock lock(mu_);
    return fs::exists(path_for(content_hash));
}

}  // namespace t2i
