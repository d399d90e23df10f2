mod gradients;

#[test]
fn elementwise_and_broadcast_ops() {
    gradients::elementwise_and_broadcast_ops();
}

#[test]
fn piecewise_ops_away_from_kinks() {
    gradients::piecewise_ops_away_from_kinks();
}

#[test]
fn reductions_and_softmax() {
    gradients::reductions_and_softmax();
}

#[test]
fn shape_ops() {
    gradients::shape_ops();
}

#[test]
fn dispatch_by_kind() {
    gradients::dispatch_by_kind();
}

#[test]
fn sinkhorn_and_affinity() {
    gradients::sinkhorn_and_affinity();
}

#[test]
fn segmentation_loss() {
    gradients::segmentation_loss();
}

#[test]
fn matching_loss_through_sinkhorn() {
    gradients::matching_loss_through_sinkhorn();
}

#[test]
fn rigidity_loss_with_detached_poses() {
    gradients::rigidity_loss_with_detached_poses();
}
