//! Residual U-Net lesion segmentation with generalized Dice loss.

pub mod loss;
pub mod predict;
pub mod train;
pub mod unet;

pub use loss::{generalized_dice_loss, generalized_dice_var};
pub use predict::{predict_volume, unsupervised_segment};
pub use train::{train_bounds, train_segmentation, train_segmentation_manifest, BoundModels, SegEpoch, SegHistory, SegTrainConfig};
pub use unet::{unet_forward, UNet, UNetConfig, LESION_CHANNEL};
