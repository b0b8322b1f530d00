#![allow(dead_code)]

use std::path::Path;

/// A configuration that trains in well under a second.
pub fn tiny_config(out: &Path) -> String {
    format!(
        "stage_widths = 4,4,8,8
image_hw = 32,16
embed_dim = 8
af_dim = 8
epochs = 2
p = 2
k = 2
source.num_identities = 6
source.test_identities = 3
source.images_per_identity = 4
source.cameras = 2
target.num_identities = 3
target.test_identities = 3
target.identity_offset = 6
target.images_per_identity = 4
target.cameras = 2
output_dir = {}
",
        out.display()
    )
}
