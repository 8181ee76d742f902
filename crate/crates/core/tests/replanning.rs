mod common;

#[test]
fn transient_faults_recover_without_backtracking() {
    common::transient_faults_recover().unwrap();
}

#[test]
fn persistent_faults_send_one_backtrack_query() {
    common::persistent_faults_backtrack_once().unwrap();
}

#[test]
fn invalid_replies_fall_back() {
    common::invalid_replies_fall_back().unwrap();
}
