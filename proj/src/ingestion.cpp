#include "hdprobe/ingestion.hpp"

namespace hdprobe::ingestion {

void validate(const EmbeddingRecord& record) {
  if (record.matrix.rows() < 2) {
    throw InvalidArgument("record '" + record.input_id + "': need at least 2 stored layers");
  }
  if (!record.matrix.allFinite()) throw InvalidArgument("record '" + record.input_id + "': non-finite embedding");
  const auto& topk = record.meta.topk;
  for (std::size_t i = 1; i < topk.size(); ++i) {
    if (topk[i].prob > topk[i - 1].prob) {
      throw InvalidArgument("record '" + record.input_id + "': top-k not sorted by probability");
    }
  }
}

CompressedEmbedding ingest(const EmbeddingRecord& record, const IngestConfig& cfg) {
  validate(record);
  const auto layers = static_cast<std::size_t>(record.matrix.rows());
  CompressedEmbedding out;
  out.input_id = record.input_id;
  if (cfg.skip_clustering) {
    out.vector = record.matrix.cast<double>().colwise().sum().transpose().cast<float>();
    out.k_used = layers;
    return out;
  }
  if (cfg.k > layers) {
    throw InvalidArgument("record '" + record.input_id + "': k = " + std::to_string(cfg.k) + " exceeds " +
                          std::to_string(layers) + " stored layers");
  }
  Eigen::MatrixXd rows = record.matrix.cast<double>();
  if (cfg.canonicalize) rows = canonical_rows<double>(rows);
  const auto km = kmeans<double>(rows, cfg.k, cfg.kmeans);
  out.vector = km.centroids.colwise().sum().transpose().cast<float>();
  out.k_used = cfg.k;
  return out;
}

LayerRange stored_layer_range(int num_layers) {
  if (num_layers < 1) throw InvalidArgument("stored_layer_range: need >= 1 layer");
  return LayerRange{num_layers / 2, num_layers};
}

}  // namespace hdprobe::ingestion
