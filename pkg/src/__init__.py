# SGP point cloud registration toolkit
# Main package initialization
