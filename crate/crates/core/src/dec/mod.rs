mod assign;
mod cluster;
mod kmeans;
mod losses;

pub use assign::{soft_assign, soft_assign_backward, target_distribution};
pub use cluster::{ClusterState, LossWeights};
pub use kmeans::{
    init_centroids, kmeans, majority_mapping, reseed_degenerate, KMEANS_MAX_ITERS, KMEANS_RESTARTS,
};
pub use losses::{
    class_probabilities, clustering_loss, clustering_loss_grad, combined_loss, disentanglement_loss,
    disentanglement_loss_grad, latent_covariance, reconstruction_loss, reconstruction_loss_grad,
    supervised_loss, supervised_loss_grad_q, LossTerms, SupervisedOutcome, LOG_EPS,
};
